#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sentinel::data {

enum class Split { train, val, test, unassigned };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// One labeled image on disk. Paths are stored relative to the manifest root.
struct ImageRecord {
  std::string path;
  int label = 0;  // 0 = real, 1 = fake
  std::string source = "unknown";
  Split split = Split::unassigned;
};

struct SplitRatios {
  double train = 0.80;
  double val = 0.15;
  double test = 0.05;

  /// Throws ValidationError unless the fractions are nonnegative and sum to 1
  /// within 1e-9.
  void validate() const;
};

struct DatasetManifest {
  uint64_t seed = 0;
  std::filesystem::path root;
  std::vector<ImageRecord> records;
  /// counts[split][class name] with class names "real" and "fake".
  std::map<std::string, std::map<std::string, int>> counts;

  void recount();
  std::vector<ImageRecord> split_records(Split s) const;
};

/// Walks a class-folder tree and inventories every PNG/JPEG. The root holds
/// either real/ and fake/ directly (records come back unassigned) or
/// train|val|test folders each holding real/ and fake/. Record order is
/// lexicographic by relative path. Files that cannot be opened or are not
/// PNG/JPEG by magic bytes are skipped and reported through `warnings`.
DatasetManifest scan_tree(const std::filesystem::path& root,
                          std::vector<std::string>* warnings = nullptr);

/// Source tag -> splits that records carrying the tag may land in.
using SourcePins = std::map<std::string, std::vector<Split>>;

/// Assigns train/val/test splits with a seeded shuffle followed by per-class
/// largest-remainder partitioning, so split sizes are exact for each class
/// total. Pinned sources are partitioned over their allowed splits with the
/// ratios renormalized. All input records must be unassigned.
DatasetManifest assign_splits(std::vector<ImageRecord> records,
                              const SplitRatios& ratios, uint64_t seed,
                              const std::filesystem::path& root = {},
                              const SourcePins& pins = {});

struct Finding {
  std::string kind;  // "missing", "undecodable", "count_mismatch", "split"
  std::string detail;
};

struct VerificationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
};

/// Checks every record's file exists and decodes, and that the stored counts
/// match the records. Never mutates the manifest.
VerificationReport verify_manifest(const DatasetManifest& manifest);

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace sentinel::data
