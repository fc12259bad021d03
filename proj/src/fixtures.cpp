#include "sentinel/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sentinel/core.hpp"

namespace fs = std::filesystem;

namespace sentinel::fx {

const char* kind_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::clone: return "clone";
    case ArtifactKind::seam: return "seam";
    case ArtifactKind::highfreq: return "highfreq";
    default: return "none";
  }
}

ArtifactKind kind_from_name(const std::string& name) {
  if (name == "clone") return ArtifactKind::clone;
  if (name == "seam") return ArtifactKind::seam;
  if (name == "highfreq") return ArtifactKind::highfreq;
  if (name == "none") return ArtifactKind::none;
  throw ValidationError("unknown artifact kind: " + name);
}

void FixtureSpec::validate() const {
  if (n_per_class <= 0) throw ValidationError("n_per_class must be positive");
  if (size < 64) throw ValidationError("fixture size must be >= 64");
  if (clone_copies < 2) throw ValidationError("clone_copies must be >= 2");
  if (clone_patch <= 0 || clone_patch >= size / 2) {
    throw ValidationError(
        "clone placement impossible: clone_patch must be in (0, size/2)");
  }
  if (artifact_kinds.empty()) {
    throw ValidationError("artifact_kinds must not be empty");
  }
  if (hf_amplitude <= 0.f || hf_amplitude >= 0.5f) {
    throw ValidationError("hf_amplitude must be in (0, 0.5)");
  }
}

namespace {

// Hash a lattice point into [0,1).
inline float lattice_value(uint64_t seed, int octave, int ix, int iy) {
  uint64_t h = mix64(seed, static_cast<uint64_t>(octave) * 0x9e37u +
                               0xabcdef12u);
  h = mix64(h, (static_cast<uint64_t>(static_cast<uint32_t>(ix)) << 32) |
                   static_cast<uint32_t>(iy));
  return static_cast<float>(h >> 11) * 0x1.0p-53f;
}

inline float fade(float t) { return t * t * t * (t * (t * 6.f - 15.f) + 10.f); }

// Multi-octave smoothed value noise in [0,1].
float terrain_height(uint64_t seed, int size, int x, int y) {
  float total = 0.f, norm = 0.f, amp = 1.f;
  for (int o = 0; o < 4; ++o) {
    const float cells = 4.f * static_cast<float>(1 << o);
    float u = x * cells / size;
    float v = y * cells / size;
    int iu = static_cast<int>(u);
    int iv = static_cast<int>(v);
    float fu = fade(u - iu);
    float fv = fade(v - iv);
    float a = lattice_value(seed, o, iu, iv);
    float b = lattice_value(seed, o, iu + 1, iv);
    float c = lattice_value(seed, o, iu, iv + 1);
    float d = lattice_value(seed, o, iu + 1, iv + 1);
    float top = a + (b - a) * fu;
    float bot = c + (d - c) * fu;
    total += amp * (top + (bot - top) * fv);
    norm += amp;
    amp *= 0.5f;
  }
  return total / norm;
}

struct PaletteStop {
  float t, r, g, b;
};

// Land-cover gradient from dark forest through grass to bright soil.
constexpr PaletteStop kTerrain[] = {
    {0.00f, 0.10f, 0.18f, 0.08f}, {0.30f, 0.17f, 0.32f, 0.12f},
    {0.52f, 0.36f, 0.45f, 0.20f}, {0.72f, 0.58f, 0.52f, 0.33f},
    {1.00f, 0.80f, 0.73f, 0.58f}};

void palette_color(float t, float tint[3], float out[3]) {
  t = std::clamp(t, 0.f, 1.f);
  const int n = static_cast<int>(std::size(kTerrain));
  int i = 0;
  while (i + 2 < n && t > kTerrain[i + 1].t) ++i;
  const PaletteStop& lo = kTerrain[i];
  const PaletteStop& hi = kTerrain[i + 1];
  float f = (t - lo.t) / (hi.t - lo.t);
  out[0] = std::clamp((lo.r + (hi.r - lo.r) * f) * tint[0], 0.f, 1.f);
  out[1] = std::clamp((lo.g + (hi.g - lo.g) * f) * tint[1], 0.f, 1.f);
  out[2] = std::clamp((lo.b + (hi.b - lo.b) * f) * tint[2], 0.f, 1.f);
}

struct Rect {
  int y, x, h, w;
  bool overlaps(const Rect& o) const {
    return y < o.y + o.h && o.y < y + h && x < o.x + o.w && o.x < x + w;
  }
};

float patch_variance(const ImageF& img, const Rect& r) {
  double sum = 0, sq = 0;
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      const float* p = img.at(y, x);
      double l = p[0] + p[1] + p[2];
      sum += l;
      sq += l * l;
    }
  }
  double n = static_cast<double>(r.h) * r.w;
  double mean = sum / n;
  return static_cast<float>(sq / n - mean * mean);
}

void mark_rect(MaskU8& mask, const Rect& r) {
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      mask.m[static_cast<size_t>(y) * mask.w + x] = 255;
    }
  }
}

}  // namespace

FixtureSample gen_real_tile(int size, uint64_t seed) {
  if (size < 64) throw ValidationError("fixture size must be >= 64");
  FixtureSample s;
  s.image = ImageF(size, size);
  s.label = 0;
  s.artifact_mask = MaskU8(size, size);
  s.kind = ArtifactKind::none;

  Rng rng(mix64(seed, 0x7e44a1u));
  float tint[3] = {rng.uniform(0.85f, 1.15f), rng.uniform(0.85f, 1.15f),
                   rng.uniform(0.85f, 1.15f)};
  uint64_t noise_seed = mix64(seed, 0x6e01u);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float t = terrain_height(noise_seed, size, x, y);
      palette_color(t, tint, s.image.at(y, x));
    }
  }
  return s;
}

FixtureSample gen_fake_tile(int size, ArtifactKind kind,
                            const FixtureSpec& spec, uint64_t seed) {
  spec.validate();
  if (std::find(spec.artifact_kinds.begin(), spec.artifact_kinds.end(),
                kind) == spec.artifact_kinds.end()) {
    throw ValidationError(std::string("artifact kind '") + kind_name(kind) +
                          "' not enabled in the fixture spec");
  }

  FixtureSample s = gen_real_tile(size, mix64(seed, 0xba5eu));
  s.label = 1;
  s.kind = kind;
  Rng rng(mix64(seed, 0xa27154c7u));

  if (kind == ArtifactKind::clone) {
    const int p = spec.clone_patch;
    // Pick the most detailed of a few candidate source patches so the copies
    // carry visible structure.
    Rect src{0, 0, p, p};
    float best = -1.f;
    for (int i = 0; i < 8; ++i) {
      Rect cand{rng.below(size - p + 1), rng.below(size - p + 1), p, p};
      float v = patch_variance(s.image, cand);
      if (v > best) {
        best = v;
        src = cand;
      }
    }
    std::vector<Rect> placed{src};
    for (int copy = 0; copy < spec.clone_copies - 1; ++copy) {
      bool ok = false;
      for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
        Rect cand{rng.below(size - p + 1), rng.below(size - p + 1), p, p};
        ok = std::none_of(placed.begin(), placed.end(),
                          [&](const Rect& r) { return cand.overlaps(r); });
        if (ok) {
          for (int y = 0; y < p; ++y) {
            const float* from = s.image.at(src.y + y, src.x);
            std::copy(from, from + static_cast<size_t>(p) * 3,
                      s.image.at(cand.y + y, cand.x));
          }
          mark_rect(s.artifact_mask, cand);
          placed.push_back(cand);
        }
      }
      if (!ok) {
        throw ValidationError(
            "clone placement impossible for the requested patch size and "
            "copy count");
      }
    }
  } else if (kind == ArtifactKind::seam) {
    FixtureSample other = gen_real_tile(size, mix64(seed, 0x5ea2u));
    bool vertical = rng.flip(0.5);
    int cut = size / 2 + rng.below(size / 4) - size / 8;
    bool keep_first = rng.flip(0.5);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        int coord = vertical ? x : y;
        bool second_half = coord >= cut;
        bool replace = keep_first ? second_half : !second_half;
        if (replace) {
          const float* p = other.image.at(y, x);
          float* o = s.image.at(y, x);
          o[0] = p[0];
          o[1] = p[1];
          o[2] = p[2];
          s.artifact_mask.m[static_cast<size_t>(y) * size + x] = 255;
        }
      }
    }
  } else if (kind == ArtifactKind::highfreq) {
    int rw = size / 4 + rng.below(size / 4);
    int rh = size / 4 + rng.below(size / 4);
    Rect r{rng.below(size - rh + 1), rng.below(size - rw + 1), rh, rw};
    const float a = spec.hf_amplitude;
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        float* p = s.image.at(y, x);
        float sign = ((x + y) & 1) ? a : -a;
        for (int c = 0; c < 3; ++c) {
          // Compress into [a, 1-a] first so the checkerboard never clips.
          p[c] = a + (1.f - 2.f * a) * p[c] + sign;
        }
      }
    }
    mark_rect(s.artifact_mask, r);
  } else {
    throw ValidationError("gen_fake_tile needs a concrete artifact kind");
  }
  return s;
}

data::DatasetManifest build_fixture(const FixtureSpec& spec,
                                    const fs::path& out_dir,
                                    const data::SplitRatios& ratios) {
  spec.validate();
  ratios.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "real", ec);
  fs::create_directories(out_dir / "fake", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) {
    throw RuntimeFailure("cannot create fixture directories under " +
                         out_dir.string());
  }

  const int n = spec.n_per_class;
  std::vector<data::ImageRecord> records(static_cast<size_t>(n) * 2);

  parallel_for(2 * n, [&](int i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.png", i < n ? i : i - n);
    if (i < n) {
      FixtureSample s = gen_real_tile(spec.size, mix64(spec.seed, 0xea1u, i));
      save_png(out_dir / "real" / name, s.image);
      records[i] = {std::string("real/") + name, 0, "fixture",
                    data::Split::unassigned};
    } else {
      const int j = i - n;
      ArtifactKind kind =
          spec.artifact_kinds[static_cast<size_t>(j) %
                              spec.artifact_kinds.size()];
      FixtureSample s =
          gen_fake_tile(spec.size, kind, spec, mix64(spec.seed, 0xfa4eu, j));
      save_png(out_dir / "fake" / name, s.image);
      save_mask_png(out_dir / "masks" / name, s.artifact_mask);
      records[i] = {std::string("fake/") + name, 1, "fixture",
                    data::Split::unassigned};
    }
  });

  data::DatasetManifest manifest =
      data::assign_splits(std::move(records), ratios, spec.seed, out_dir);
  data::save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace sentinel::fx
