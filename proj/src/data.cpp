#include "sentinel/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sentinel/core.hpp"
#include "sentinel/image.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace sentinel::data {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unassigned";
  }
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "unassigned") return Split::unassigned;
  throw ValidationError("unknown split name: " + name);
}

void SplitRatios::validate() const {
  if (train < 0 || val < 0 || test < 0) {
    throw ValidationError("split ratios must be nonnegative");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }
}

void DatasetManifest::recount() {
  counts.clear();
  for (const auto& r : records) {
    counts[split_name(r.split)][r.label == 0 ? "real" : "fake"] += 1;
  }
}

std::vector<ImageRecord> DatasetManifest::split_records(Split s) const {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

namespace {

bool has_image_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Cheap magic-byte probe; full decodability is verify_manifest's job.
bool looks_like_image(const fs::path& p, std::string& why) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    why = "unreadable";
    return false;
  }
  unsigned char magic[4] = {0, 0, 0, 0};
  in.read(reinterpret_cast<char*>(magic), 4);
  if (in.gcount() < 4) {
    why = "truncated";
    return false;
  }
  const bool png = magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' &&
                   magic[3] == 'G';
  const bool jpg = magic[0] == 0xFF && magic[1] == 0xD8;
  if (!png && !jpg) {
    why = "not a PNG or JPEG";
    return false;
  }
  return true;
}

void scan_class_dir(const fs::path& root, const fs::path& class_dir, int label,
                    Split split, std::vector<ImageRecord>& out,
                    std::vector<std::string>* warnings) {
  for (const auto& entry : fs::recursive_directory_iterator(class_dir)) {
    if (!entry.is_regular_file() || !has_image_ext(entry.path())) continue;
    std::string why;
    if (!looks_like_image(entry.path(), why)) {
      if (warnings) {
        warnings->push_back(entry.path().string() + ": " + why + ", skipped");
      }
      continue;
    }
    ImageRecord rec;
    rec.path = fs::relative(entry.path(), root).generic_string();
    rec.label = label;
    rec.source = "disk";
    rec.split = split;
    out.push_back(std::move(rec));
  }
}

}  // namespace

DatasetManifest scan_tree(const fs::path& root,
                          std::vector<std::string>* warnings) {
  if (!fs::is_directory(root)) {
    throw ValidationError("dataset root is not a directory: " + root.string());
  }
  const Split split_dirs[] = {Split::train, Split::val, Split::test};
  bool any_split_dir = false;
  for (Split s : split_dirs) {
    if (fs::is_directory(root / split_name(s))) any_split_dir = true;
  }

  DatasetManifest m;
  m.root = root;
  if (any_split_dir) {
    for (Split s : split_dirs) {
      fs::path sd = root / split_name(s);
      if (!fs::is_directory(sd)) continue;
      for (const char* cls : {"real", "fake"}) {
        if (!fs::is_directory(sd / cls)) {
          throw ValidationError("missing class folder: " +
                                (sd / cls).string());
        }
      }
      scan_class_dir(root, sd / "real", 0, s, m.records, warnings);
      scan_class_dir(root, sd / "fake", 1, s, m.records, warnings);
    }
  } else {
    for (const char* cls : {"real", "fake"}) {
      if (!fs::is_directory(root / cls)) {
        throw ValidationError("missing class folder: " +
                              (root / cls).string());
      }
    }
    scan_class_dir(root, root / "real", 0, Split::unassigned, m.records,
                   warnings);
    scan_class_dir(root, root / "fake", 1, Split::unassigned, m.records,
                   warnings);
  }

  if (m.records.empty()) {
    throw ValidationError("no images found under " + root.string());
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const ImageRecord& a, const ImageRecord& b) {
              return a.path < b.path;
            });
  m.recount();
  return m;
}

namespace {

// Largest-remainder apportionment of `total` over `ratios`; ties break toward
// the earlier split so results are deterministic.
std::vector<int> apportion(int total, const std::vector<double>& ratios) {
  const int k = static_cast<int>(ratios.size());
  std::vector<int> out(k, 0);
  std::vector<std::pair<double, int>> rem;
  int assigned = 0;
  for (int i = 0; i < k; ++i) {
    double exact = total * ratios[i];
    out[i] = static_cast<int>(std::floor(exact + 1e-12));
    assigned += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (int i = 0; assigned < total; ++i, ++assigned) {
    out[rem[static_cast<size_t>(i) % rem.size()].second] += 1;
  }
  return out;
}

}  // namespace

DatasetManifest assign_splits(std::vector<ImageRecord> records,
                              const SplitRatios& ratios, uint64_t seed,
                              const fs::path& root, const SourcePins& pins) {
  ratios.validate();
  for (const auto& r : records) {
    if (r.split != Split::unassigned) {
      throw ValidationError("assign_splits requires unassigned records (" +
                            r.path + " already has a split)");
    }
  }

  // Seeded permutation; the assignment below walks records in this order.
  std::vector<int> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix64(seed, 0x5eedu));
  rng.shuffle(order);

  auto allowed_splits = [&](const std::string& source) {
    std::vector<Split> all{Split::train, Split::val, Split::test};
    auto it = pins.find(source);
    if (it == pins.end()) return all;
    if (it->second.empty()) {
      throw ValidationError("pin for source '" + source +
                            "' allows no splits");
    }
    return it->second;
  };

  // Group permuted record indices by (label, allowed splits).
  std::map<std::pair<int, std::vector<Split>>, std::vector<int>> groups;
  for (int idx : order) {
    groups[{records[idx].label, allowed_splits(records[idx].source)}]
        .push_back(idx);
  }

  const double ratio_of[3] = {ratios.train, ratios.val, ratios.test};
  for (auto& [key, members] : groups) {
    const auto& splits = key.second;
    std::vector<double> rs;
    double norm = 0;
    for (Split s : splits) norm += ratio_of[static_cast<int>(s)];
    if (norm <= 0) {
      throw ValidationError("pinned splits all have zero ratio");
    }
    for (Split s : splits) rs.push_back(ratio_of[static_cast<int>(s)] / norm);

    int nonzero = 0;
    for (double r : rs) {
      if (r > 0) ++nonzero;
    }
    if (static_cast<int>(members.size()) < nonzero) {
      throw ValidationError(
          "degenerate split: class " +
          std::string(key.first == 0 ? "real" : "fake") + " has " +
          std::to_string(members.size()) + " records for " +
          std::to_string(nonzero) + " nonzero splits");
    }

    std::vector<int> sizes = apportion(static_cast<int>(members.size()), rs);
    size_t cursor = 0;
    for (size_t si = 0; si < splits.size(); ++si) {
      for (int n = 0; n < sizes[si]; ++n) {
        records[members[cursor++]].split = splits[si];
      }
    }
  }

  DatasetManifest m;
  m.seed = seed;
  m.root = root;
  m.records = std::move(records);
  std::sort(m.records.begin(), m.records.end(),
            [](const ImageRecord& a, const ImageRecord& b) {
              return a.path < b.path;
            });
  m.recount();
  return m;
}

VerificationReport verify_manifest(const DatasetManifest& manifest) {
  VerificationReport report;
  for (const auto& r : manifest.records) {
    fs::path full = manifest.root / r.path;
    if (!fs::exists(full)) {
      report.findings.push_back({"missing", r.path});
      continue;
    }
    try {
      (void)load_image(full);
    } catch (const std::exception&) {
      report.findings.push_back({"undecodable", r.path});
    }
  }
  DatasetManifest fresh = manifest;
  fresh.recount();
  if (fresh.counts != manifest.counts) {
    report.findings.push_back(
        {"count_mismatch", "stored counts disagree with records"});
  }
  return report;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json j;
  j["seed"] = manifest.seed;
  j["root"] = manifest.root.generic_string();
  j["records"] = json::array();
  for (const auto& r : manifest.records) {
    j["records"].push_back({{"path", r.path},
                            {"label", r.label},
                            {"source", r.source},
                            {"split", split_name(r.split)}});
  }
  j["counts"] = manifest.counts;
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open manifest: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("manifest is not valid JSON: " + path.string() +
                          " (" + e.what() + ")");
  }
  DatasetManifest m;
  m.seed = j.at("seed").get<uint64_t>();
  m.root = fs::path(j.at("root").get<std::string>());
  for (const auto& jr : j.at("records")) {
    ImageRecord r;
    r.path = jr.at("path").get<std::string>();
    r.label = jr.at("label").get<int>();
    if (r.label != 0 && r.label != 1) {
      throw ValidationError("record label out of range: " + r.path);
    }
    r.source = jr.value("source", "unknown");
    r.split = split_from_name(jr.at("split").get<std::string>());
    m.records.push_back(std::move(r));
  }
  if (j.contains("counts")) {
    m.counts = j.at("counts")
                   .get<std::map<std::string, std::map<std::string, int>>>();
  } else {
    m.recount();
  }
  return m;
}

}  // namespace sentinel::data
