#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sentinel/data.hpp"
#include "sentinel/image.hpp"

namespace sentinel::fx {

enum class ArtifactKind { clone, seam, highfreq, none };

const char* kind_name(ArtifactKind k);
ArtifactKind kind_from_name(const std::string& name);

/// Parameters for procedural tile generation. Everything is a pure function
/// of (spec, seed), so regenerated corpora are byte-identical.
struct FixtureSpec {
  int n_per_class = 100;
  int size = 224;
  std::vector<ArtifactKind> artifact_kinds = {ArtifactKind::clone,
                                              ArtifactKind::seam,
                                              ArtifactKind::highfreq};
  uint64_t seed = 0;
  int clone_patch = 48;
  int clone_copies = 3;
  float hf_amplitude = 0.25f;

  void validate() const;
};

struct FixtureSample {
  ImageF image;
  int label = 0;
  MaskU8 artifact_mask;
  ArtifactKind kind = ArtifactKind::none;
};

/// Smooth multi-octave value noise mapped through a terrain palette.
/// Authentic tiles are spatially continuous by construction; any hard edge
/// in a fixture therefore comes from an injected artifact.
FixtureSample gen_real_tile(int size, uint64_t seed);

/// Starts from gen_real_tile and injects one artifact:
///  - clone: a high-detail patch duplicated at non-overlapping locations
///  - seam: hard vertical/horizontal splice of two independent tiles
///  - highfreq: 2-pixel-period checkerboard modulation inside a rectangle
/// The mask marks exactly the altered pixels.
FixtureSample gen_fake_tile(int size, ArtifactKind kind,
                            const FixtureSpec& spec, uint64_t seed);

/// Writes n_per_class real and fake tiles as PNGs plus ground-truth masks and
/// a manifest with splits assigned.
data::DatasetManifest build_fixture(const FixtureSpec& spec,
                                    const std::filesystem::path& out_dir,
                                    const data::SplitRatios& ratios = {});

}  // namespace sentinel::fx
