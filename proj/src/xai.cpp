#include "sentinel/xai.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sentinel/core.hpp"

namespace fs = std::filesystem;

namespace sentinel::xai {

using nn::Mat;
using nn::Vec;

void minmax_normalize(std::vector<float>& v) {
  if (v.empty()) return;
  float lo = v[0], hi = v[0];
  for (float x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi - lo <= 0.f) {
    std::fill(v.begin(), v.end(), 0.f);
    return;
  }
  const float inv = 1.f / (hi - lo);
  for (float& x : v) x = (x - lo) * inv;
}

// ---------------------------------------------------------------------------
// Grad-CAM
// ---------------------------------------------------------------------------

SaliencyMap grad_cam_from_context(const model::CamContext& ctx, int origin_h,
                                  int origin_w) {
  const Chw& A = ctx.activations;
  const Chw& G = ctx.gradients;
  if (A.c != G.c || A.h != G.h || A.w != G.w) {
    throw ValidationError("grad_cam: activation/gradient shape mismatch");
  }
  const size_t plane_n = static_cast<size_t>(A.h) * A.w;

  // alpha_k: spatial mean of the gradient for channel k.
  std::vector<double> alpha(static_cast<size_t>(A.c));
  for (int k = 0; k < A.c; ++k) {
    const float* g = G.plane(k);
    double sum = 0;
    for (size_t i = 0; i < plane_n; ++i) sum += g[i];
    alpha[static_cast<size_t>(k)] = sum / static_cast<double>(plane_n);
  }

  std::vector<float> raw(plane_n, 0.f);
  for (int k = 0; k < A.c; ++k) {
    const float* a = A.plane(k);
    const float w = static_cast<float>(alpha[static_cast<size_t>(k)]);
    for (size_t i = 0; i < plane_n; ++i) raw[i] += w * a[i];
  }
  for (float& v : raw) v = v > 0.f ? v : 0.f;

  SaliencyMap map;
  map.origin_h = origin_h;
  map.origin_w = origin_w;
  if (origin_h != A.h || origin_w != A.w) {
    map.grid = resize_plane_bilinear(raw, A.h, A.w, origin_h, origin_w);
    map.rows = origin_h;
    map.cols = origin_w;
  } else {
    map.grid = std::move(raw);
    map.rows = A.h;
    map.cols = A.w;
  }
  minmax_normalize(map.grid);
  return map;
}

SaliencyMap grad_cam(const model::Classifier& model, const Chw& image,
                     int target_class, const std::string& target_layer) {
  model::CamContext ctx =
      model.cam_capture(image, target_class, target_layer);
  return grad_cam_from_context(ctx, image.h, image.w);
}

// ---------------------------------------------------------------------------
// Attention rollout
// ---------------------------------------------------------------------------

HeadFusion fusion_from_name(const std::string& s) {
  if (s == "mean") return HeadFusion::mean;
  if (s == "max") return HeadFusion::max;
  if (s == "min") return HeadFusion::min;
  throw ValidationError("unknown head fusion: " + s);
}

namespace {

void check_row_stochastic(const Mat& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double sum = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) < -1e-7f) {
        throw ValidationError(std::string(what) +
                              ": negative attention entry");
      }
      sum += m(r, c);
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      throw ValidationError(std::string(what) +
                            ": attention rows must sum to 1");
    }
  }
}

Mat fuse_heads(const model::AttentionStack& stack, int layer,
               HeadFusion fusion) {
  Mat f = stack.at(layer, 0);
  for (int h = 1; h < stack.heads; ++h) {
    const Mat& a = stack.at(layer, h);
    switch (fusion) {
      case HeadFusion::mean: f += a; break;
      case HeadFusion::max: f = f.cwiseMax(a); break;
      case HeadFusion::min: f = f.cwiseMin(a); break;
    }
  }
  if (fusion == HeadFusion::mean) f /= static_cast<float>(stack.heads);
  return f;
}

// Zero the lowest `count` entries of f, skipping the CLS column.
void discard_lowest(Mat& f, int count) {
  if (count <= 0) return;
  const int T = static_cast<int>(f.rows());
  std::vector<int> idx(static_cast<size_t>(T) * T);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(),
                    idx.begin() + std::min<size_t>(idx.size(),
                                                   static_cast<size_t>(count)),
                    idx.end(), [&](int a, int b) {
                      return f.data()[a] < f.data()[b];
                    });
  for (int i = 0; i < count && i < static_cast<int>(idx.size()); ++i) {
    const int flat = idx[static_cast<size_t>(i)];
    if (flat % T == 0) continue;  // CLS column stays
    f.data()[flat] = 0.f;
  }
}

Mat residual_normalize(const Mat& f) {
  const Eigen::Index T = f.rows();
  Mat a = 0.5f * f;
  for (Eigen::Index i = 0; i < T; ++i) a(i, i) += 0.5f;
  for (Eigen::Index r = 0; r < T; ++r) {
    double sum = 0;
    for (Eigen::Index c = 0; c < T; ++c) sum += a(r, c);
    if (sum <= 0) {
      throw ValidationError("rollout produced an all-zero attention row");
    }
    const float inv = static_cast<float>(1.0 / sum);
    a.row(r) *= inv;
  }
  return a;
}

SaliencyMap rollout_from_layers(const std::vector<Mat>& fused_layers,
                                int tokens, int patch_grid,
                                RolloutTrace* trace) {
  Mat R = Mat::Identity(tokens, tokens);
  for (const Mat& f : fused_layers) {
    Mat a_hat = residual_normalize(f);
    R = a_hat * R;
    if (trace) {
      trace->fused.push_back(f);
      trace->a_hat.push_back(a_hat);
      trace->cumulative.push_back(R);
    }
  }
  SaliencyMap map;
  map.rows = patch_grid;
  map.cols = patch_grid;
  map.origin_h = patch_grid;
  map.origin_w = patch_grid;
  map.grid.resize(static_cast<size_t>(tokens - 1));
  for (int i = 1; i < tokens; ++i) {
    map.grid[static_cast<size_t>(i - 1)] = R(0, i);
  }
  minmax_normalize(map.grid);
  return map;
}

}  // namespace

SaliencyMap attention_rollout(const model::AttentionStack& stack,
                              float discard_ratio, HeadFusion fusion,
                              RolloutTrace* trace) {
  if (stack.layers <= 0 || stack.heads <= 0 || stack.tokens <= 1) {
    throw ValidationError("attention_rollout: empty stack");
  }
  if (discard_ratio < 0.f || discard_ratio >= 1.f) {
    throw ValidationError("discard_ratio must be in [0, 1)");
  }
  const int T = stack.tokens;
  std::vector<Mat> fused_layers;
  fused_layers.reserve(static_cast<size_t>(stack.layers));
  for (int l = 0; l < stack.layers; ++l) {
    for (int h = 0; h < stack.heads; ++h) {
      check_row_stochastic(stack.at(l, h), "attention_rollout");
    }
    Mat f = fuse_heads(stack, l, fusion);
    discard_lowest(f, static_cast<int>(discard_ratio *
                                       static_cast<float>(T) * T));
    fused_layers.push_back(std::move(f));
  }
  return rollout_from_layers(fused_layers, T, stack.patch_grid, trace);
}

SaliencyMap grad_attention_rollout(const model::AttentionStack& stack,
                                   RolloutTrace* trace) {
  if (!stack.has_grads()) {
    throw ValidationError(
        "grad_attention_rollout needs attention gradients; capture with "
        "with_grads=true");
  }
  const int T = stack.tokens;
  std::vector<Mat> fused_layers;
  for (int l = 0; l < stack.layers; ++l) {
    Mat f = Mat::Zero(T, T);
    for (int h = 0; h < stack.heads; ++h) {
      check_row_stochastic(stack.at(l, h), "grad_attention_rollout");
      f += (stack.grad_at(l, h).cwiseProduct(stack.at(l, h))).cwiseMax(0.f);
    }
    f /= static_cast<float>(stack.heads);
    fused_layers.push_back(std::move(f));
  }
  return rollout_from_layers(fused_layers, T, stack.patch_grid, trace);
}

// ---------------------------------------------------------------------------
// Overlay rendering
// ---------------------------------------------------------------------------

namespace {

// Anchor colors sampled along each palette; linearly interpolated.
constexpr float kViridis[][3] = {
    {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f},
    {0.254f, 0.265f, 0.530f}, {0.207f, 0.372f, 0.553f},
    {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
    {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f},
    {0.478f, 0.821f, 0.318f}, {0.741f, 0.873f, 0.150f},
    {0.993f, 0.906f, 0.144f}};

constexpr float kJet[][3] = {
    {0.0f, 0.0f, 0.5f}, {0.0f, 0.0f, 1.0f}, {0.0f, 0.5f, 1.0f},
    {0.0f, 1.0f, 1.0f}, {0.5f, 1.0f, 0.5f}, {1.0f, 1.0f, 0.0f},
    {1.0f, 0.5f, 0.0f}, {1.0f, 0.0f, 0.0f}, {0.5f, 0.0f, 0.0f}};

template <size_t N>
void sample_anchors(const float (&anchors)[N][3], float t, float rgb[3]) {
  t = std::clamp(t, 0.f, 1.f);
  const float pos = t * static_cast<float>(N - 1);
  const int i = std::min(static_cast<int>(pos), static_cast<int>(N) - 2);
  const float f = pos - static_cast<float>(i);
  for (int c = 0; c < 3; ++c) {
    rgb[c] = anchors[i][c] + (anchors[i + 1][c] - anchors[i][c]) * f;
  }
}

}  // namespace

void palette_rgb(const std::string& palette, float t, float rgb[3]) {
  if (palette == "viridis") {
    sample_anchors(kViridis, t, rgb);
  } else if (palette == "jet") {
    sample_anchors(kJet, t, rgb);
  } else if (palette == "gray") {
    rgb[0] = rgb[1] = rgb[2] = std::clamp(t, 0.f, 1.f);
  } else {
    throw ValidationError("unknown palette: " + palette);
  }
}

std::vector<float> upsample(const SaliencyMap& map, int h, int w) {
  return resize_plane_bilinear(map.grid, map.rows, map.cols, h, w);
}

ImageF overlay(const ImageF& image, const SaliencyMap& map, float alpha,
               const std::string& palette) {
  if (alpha < 0.f || alpha > 1.f) {
    throw ValidationError("overlay alpha must be in [0, 1]");
  }
  std::vector<float> heat = upsample(map, image.h, image.w);
  ImageF out(image.h, image.w);
  float rgb[3];
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      palette_rgb(palette, heat[static_cast<size_t>(y) * image.w + x], rgb);
      const float* src = image.at(y, x);
      float* dst = out.at(y, x);
      for (int c = 0; c < 3; ++c) {
        dst[c] = std::clamp(alpha * rgb[c] + (1.f - alpha) * src[c], 0.f, 1.f);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gallery
// ---------------------------------------------------------------------------

Method method_from_name(const std::string& s) {
  if (s == "gradcam") return Method::gradcam;
  if (s == "rollout") return Method::rollout;
  if (s == "grad_rollout") return Method::grad_rollout;
  throw ValidationError("unknown explain method: " + s);
}

const char* method_name(Method m) {
  switch (m) {
    case Method::gradcam: return "gradcam";
    case Method::rollout: return "rollout";
    default: return "grad_rollout";
  }
}

void explain_batch(const model::Classifier& model,
                   const data::DatasetManifest& manifest,
                   const tf::TransformConfig& tcfg,
                   const GalleryOptions& options, const fs::path& out_dir) {
  const bool is_cnn = model.spec().family == model::Family::cnn;
  if (options.method == Method::gradcam && !is_cnn) {
    throw ValidationError("gradcam requires a cnn model");
  }
  if (options.method != Method::gradcam && is_cnn) {
    throw ValidationError("attention rollout requires a vit model");
  }

  auto records = manifest.split_records(options.split);
  if (records.empty()) {
    throw ValidationError(std::string("no records in split '") +
                          data::split_name(options.split) + "'");
  }

  fs::create_directories(out_dir / "correct");
  fs::create_directories(out_dir / "misclassified");

  // Scores for every record, then overlays for the first n of each outcome.
  struct Scored {
    size_t idx;
    int pred;
    double confidence;
  };
  std::vector<Scored> scored(records.size());
  parallel_for(static_cast<int>(records.size()), [&](int i) {
    ImageF img = to_float(load_image(manifest.root / records[static_cast<size_t>(i)].path));
    Chw x = tf::eval_preprocess(img, tcfg);
    Vec logits = model.forward_one(x);
    Mat p = model::predict_proba(logits.transpose());
    const int pred = p(0, 1) > p(0, 0) ? 1 : 0;
    scored[static_cast<size_t>(i)] = {static_cast<size_t>(i), pred,
                                      static_cast<double>(p(0, pred))};
  });

  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  int n_correct = 0, n_wrong = 0;
  for (const auto& s : scored) {
    const auto& rec = records[s.idx];
    const bool correct = s.pred == rec.label;
    if (correct && n_correct >= options.n_correct) continue;
    if (!correct && n_wrong >= options.n_misclassified) continue;

    ImageF img = to_float(load_image(manifest.root / rec.path));
    Chw x = tf::eval_preprocess(img, tcfg);

    SaliencyMap map;
    if (options.method == Method::gradcam) {
      map = grad_cam(model, x, s.pred);
    } else if (options.method == Method::rollout) {
      auto stack = model.attention_capture(x, false);
      map = attention_rollout(stack);
    } else {
      auto stack = model.attention_capture(x, true, s.pred);
      map = grad_attention_rollout(stack);
    }

    ImageF composite = overlay(img, map, options.alpha, options.palette);
    const char* bucket = correct ? "correct" : "misclassified";
    char name[32];
    std::snprintf(name, sizeof(name), "%03d.png",
                  correct ? n_correct : n_wrong);
    fs::path rel = fs::path(bucket) / name;
    save_png(out_dir / rel, composite);

    samples.push_back({{"path", rec.path},
                       {"label", rec.label},
                       {"pred", s.pred},
                       {"confidence", s.confidence},
                       {"method", method_name(options.method)},
                       {"overlay", rel.generic_string()}});
    if (correct) {
      ++n_correct;
    } else {
      ++n_wrong;
    }
    if (n_correct >= options.n_correct && n_wrong >= options.n_misclassified) {
      break;
    }
  }

  nlohmann::ordered_json index;
  index["samples"] = samples;
  index["requested"] = {{"correct", options.n_correct},
                        {"misclassified", options.n_misclassified}};
  index["emitted"] = {{"correct", n_correct}, {"misclassified", n_wrong}};
  if (n_correct < options.n_correct || n_wrong < options.n_misclassified) {
    index["note"] = "fewer qualifying samples than requested";
  }
  std::ofstream out(out_dir / "index.json");
  if (!out) {
    throw RuntimeFailure("cannot write gallery index under " +
                         out_dir.string());
  }
  out << index.dump(2) << "\n";
}

}  // namespace sentinel::xai
