#include "sentinel/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "sentinel/core.hpp"

namespace fs = std::filesystem;

namespace sentinel::model {

using nn::Mat;
using nn::Vec;

const char* family_name(Family f) { return f == Family::cnn ? "cnn" : "vit"; }
const char* scale_name(Scale s) { return s == Scale::full ? "full" : "tiny"; }

Family family_from_name(const std::string& s) {
  if (s == "cnn") return Family::cnn;
  if (s == "vit") return Family::vit;
  throw ValidationError("unknown model family: " + s);
}

Scale scale_from_name(const std::string& s) {
  if (s == "full") return Scale::full;
  if (s == "tiny") return Scale::tiny;
  throw ValidationError("unknown model scale: " + s);
}

void ModelSpec::resolve() {
  if (num_classes != 2) {
    throw ValidationError("this toolkit is a binary classifier (2 classes)");
  }
  if (family == Family::vit) {
    if (vit_patch == 0) vit_patch = scale == Scale::full ? 16 : 8;
    if (vit_layers == 0) vit_layers = scale == Scale::full ? 12 : 4;
    if (vit_heads == 0) vit_heads = scale == Scale::full ? 12 : 4;
    if (vit_dim == 0) vit_dim = scale == Scale::full ? 768 : 128;
    if (vit_mlp_hidden == 0) {
      vit_mlp_hidden = scale == Scale::full ? 3072 : 2 * vit_dim;
    }
    if (image_size % vit_patch != 0) {
      throw ValidationError("image_size must be a multiple of vit_patch");
    }
  } else {
    if (cnn_feature_dim == 0) cnn_feature_dim = scale == Scale::full ? 2048 : 128;
  }
  if (target_layer.empty()) {
    target_layer = scale == Scale::full ? "layer4.2" : "conv3";
  }
}

int ModelSpec::feature_dim() const {
  return family == Family::vit ? vit_dim : cnn_feature_dim;
}

bool ModelSpec::operator==(const ModelSpec& o) const {
  return family == o.family && scale == o.scale &&
         num_classes == o.num_classes && dropout_p == o.dropout_p &&
         freeze_backbone == o.freeze_backbone && image_size == o.image_size &&
         vit_patch == o.vit_patch && vit_layers == o.vit_layers &&
         vit_heads == o.vit_heads && vit_dim == o.vit_dim &&
         vit_mlp_hidden == o.vit_mlp_hidden &&
         cnn_feature_dim == o.cnn_feature_dim;
}

long long head_param_count(const ModelSpec& spec) {
  ModelSpec s = spec;
  s.resolve();
  return static_cast<long long>(s.feature_dim()) * s.num_classes +
         s.num_classes;
}

GradBuffers::GradBuffers(const std::vector<nn::Param>& params) {
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.data->size(), 0.f);
}

void GradBuffers::zero() {
  for (auto& buf : g) std::fill(buf.begin(), buf.end(), 0.f);
}

// ===========================================================================
// Backbone internals
// ===========================================================================

namespace detail {

// Name -> grad buffer lookup used while accumulating unfrozen gradients.
struct GradSink {
  std::map<std::string, std::vector<float>*> by_name;
  std::vector<float>* find(const std::string& n) {
    auto it = by_name.find(n);
    return it == by_name.end() ? nullptr : it->second;
  }
};

// ---- tiny CNN -------------------------------------------------------------
//
// conv1 5x5/4 (3->24) - conv2 3x3/2 (24->64) - conv3 3x3/2 (64->feature_dim),
// each followed by ReLU; global average pooling yields the head input.
struct TinyCnnNet {
  nn::Conv2d c1, c2, c3;

  void init(int feature_dim, Rng& rng) {
    c1.init(3, 24, 5, 4, 2);
    c2.init(24, 64, 3, 2, 1);
    c3.init(64, feature_dim, 3, 2, 1);
    c1.init_he(rng);
    c2.init_he(rng);
    c3.init_he(rng);
  }

  struct Stash {
    Chw x0, p1, p2, p3;  // input and pre-ReLU activations
  };

  Chw run(const Chw& img, Stash* st) const {
    if (st) st->x0 = img;
    Chw a = c1.forward(img);
    if (st) st->p1 = a;
    nn::relu_inplace(a);
    Chw b = c2.forward(a);
    if (st) st->p2 = b;
    nn::relu_inplace(b);
    Chw c = c3.forward(b);
    if (st) st->p3 = c;
    nn::relu_inplace(c);
    return c;  // post-ReLU feature maps at the capture point
  }
};

// ---- ResNet-50 ------------------------------------------------------------
//
// Standard bottleneck layout with batch-norm statistics folded into the conv
// weights at export time, which is exact for a frozen backbone running in
// evaluation mode.
struct Bottleneck {
  nn::Conv2d conv1, conv2, conv3;
  bool has_down = false;
  nn::Conv2d down;

  void init(int in_c, int mid_c, int out_c, int stride) {
    conv1.init(in_c, mid_c, 1, 1, 0);
    conv2.init(mid_c, mid_c, 3, stride, 1);
    conv3.init(mid_c, out_c, 1, 1, 0);
    has_down = stride != 1 || in_c != out_c;
    if (has_down) down.init(in_c, out_c, 1, stride, 0);
  }

  struct Stash {
    Chw x, p1, p2, out_pre;
  };

  Chw run(const Chw& x, Stash* st) const {
    if (st) st->x = x;
    Chw y1 = conv1.forward(x);
    if (st) st->p1 = y1;
    nn::relu_inplace(y1);
    Chw y2 = conv2.forward(y1);
    if (st) st->p2 = y2;
    nn::relu_inplace(y2);
    Chw y3 = conv3.forward(y2);
    Chw idn = has_down ? down.forward(x) : x;
    for (size_t i = 0; i < y3.v.size(); ++i) y3.v[i] += idn.v[i];
    if (st) st->out_pre = y3;
    nn::relu_inplace(y3);
    return y3;
  }

  // Input gradient; weight gradients accumulate into the sink when present.
  Chw backward(const Stash& st, const Chw& dout, GradSink* gs,
               const std::string& prefix) const {
    Chw dpre = nn::relu_backward(st.out_pre, dout);
    Chw y2 = st.p2;
    nn::relu_inplace(y2);
    Chw y1 = st.p1;
    nn::relu_inplace(y1);

    auto grads_for = [&](const char* tag, const nn::Conv2d& c)
        -> std::pair<std::vector<float>*, std::vector<float>*> {
      (void)c;
      if (!gs) return {nullptr, nullptr};
      return {gs->find(prefix + "." + tag + ".w"),
              gs->find(prefix + "." + tag + ".b")};
    };

    if (gs) {
      auto [dw3, db3] = grads_for("conv3", conv3);
      if (dw3) conv3.backward_weights(y2, dpre, *dw3, *db3);
    }
    Chw dy2 = conv3.backward_data(dpre, st.p2.h, st.p2.w);
    dy2 = nn::relu_backward(st.p2, dy2);
    if (gs) {
      auto [dw2, db2] = grads_for("conv2", conv2);
      if (dw2) conv2.backward_weights(y1, dy2, *dw2, *db2);
    }
    Chw dy1 = conv2.backward_data(dy2, st.p1.h, st.p1.w);
    dy1 = nn::relu_backward(st.p1, dy1);
    if (gs) {
      auto [dw1, db1] = grads_for("conv1", conv1);
      if (dw1) conv1.backward_weights(st.x, dy1, *dw1, *db1);
    }
    Chw dx = conv1.backward_data(dy1, st.x.h, st.x.w);

    if (has_down) {
      if (gs) {
        auto [dwd, dbd] = grads_for("down", down);
        if (dwd) down.backward_weights(st.x, dpre, *dwd, *dbd);
      }
      Chw dxs = down.backward_data(dpre, st.x.h, st.x.w);
      for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxs.v[i];
    } else {
      for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dpre.v[i];
    }
    return dx;
  }
};

struct ResNetNet {
  nn::Conv2d stem;
  std::vector<Bottleneck> blocks;
  std::vector<std::string> names;

  void init() {
    stem.init(3, 64, 7, 2, 3);
    const int counts[4] = {3, 4, 6, 3};
    const int mids[4] = {64, 128, 256, 512};
    int in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const int out_c = mids[stage] * 4;
      for (int j = 0; j < counts[stage]; ++j) {
        Bottleneck b;
        const int stride = (stage > 0 && j == 0) ? 2 : 1;
        b.init(in_c, mids[stage], out_c, stride);
        blocks.push_back(std::move(b));
        names.push_back("layer" + std::to_string(stage + 1) + "." +
                        std::to_string(j));
        in_c = out_c;
      }
    }
  }

  struct Stash {
    Chw x0, stem_pre;
    std::vector<int> pool_argmax;
    Chw pool_in;  // post-ReLU stem output (pool input) for shape bookkeeping
    std::vector<Bottleneck::Stash> block_stash;
    int first_stashed = 0;  // stashes cover blocks [first_stashed, end)
  };

  Chw run(const Chw& img, Stash* st, int stash_from) const {
    if (st) {
      st->x0 = img;
      st->first_stashed = stash_from;
      st->block_stash.resize(blocks.size());
    }
    Chw x = stem.forward(img);
    if (st && stash_from == 0) st->stem_pre = x;
    nn::relu_inplace(x);
    if (st && stash_from == 0) st->pool_in = x;
    x = nn::max_pool(x, 3, 2, 1, st && stash_from == 0 ? &st->pool_argmax : nullptr);
    for (size_t i = 0; i < blocks.size(); ++i) {
      Bottleneck::Stash* bs =
          st && static_cast<int>(i) >= stash_from
              ? &st->block_stash[i]
              : nullptr;
      x = blocks[i].run(x, bs);
    }
    return x;
  }
};

// ---- ViT -------------------------------------------------------------------
//
// The full scale follows the standard pre-norm encoder; the tiny scale runs
// norm-free residual blocks (token magnitudes then carry patch-level detail
// into the attention pattern, which keeps rollout informative for a randomly
// initialized frozen backbone) with a plain final normalization.
struct VitStash {
  struct Layer {
    Mat x_in;
    Mat ln1_out;
    nn::AttentionTrace atrace;
    Mat x_mid;
    Mat ln2_out;
    Mat mlp_hidden_pre;
  };
  std::vector<Layer> layers;
  Mat x_final;
};

struct VitNet {
  int patch = 0, layers = 0, heads = 0, dim = 0, mlp_hidden = 0;
  int grid = 0, tokens = 0;
  bool pre_ln = false;
  nn::Linear patch_embed;
  std::vector<float> cls, pos;
  std::vector<nn::LayerNorm> ln1, ln2;
  std::vector<nn::MultiHeadAttention> attn;
  std::vector<nn::MlpBlock> mlp;
  nn::LayerNorm final_ln;

  void init(const ModelSpec& spec, Rng& rng) {
    patch = spec.vit_patch;
    layers = spec.vit_layers;
    heads = spec.vit_heads;
    dim = spec.vit_dim;
    mlp_hidden = spec.vit_mlp_hidden;
    grid = spec.patch_grid();
    tokens = spec.token_count();
    pre_ln = spec.scale == Scale::full;

    patch_embed.init(3 * patch * patch, dim);
    patch_embed.init_he(rng);
    cls.resize(static_cast<size_t>(dim));
    pos.resize(static_cast<size_t>(tokens) * dim);
    for (auto& v : cls) v = 0.02f * rng.gaussian();
    for (auto& v : pos) v = 0.02f * rng.gaussian();

    attn.resize(static_cast<size_t>(layers));
    mlp.resize(static_cast<size_t>(layers));
    if (pre_ln) {
      ln1.resize(static_cast<size_t>(layers));
      ln2.resize(static_cast<size_t>(layers));
    }
    for (int l = 0; l < layers; ++l) {
      attn[static_cast<size_t>(l)].init(dim, heads);
      attn[static_cast<size_t>(l)].qkv.init_he(rng);
      attn[static_cast<size_t>(l)].proj.init_he(rng, 0.5f);
      mlp[static_cast<size_t>(l)].init(dim, mlp_hidden);
      mlp[static_cast<size_t>(l)].fc1.init_he(rng);
      mlp[static_cast<size_t>(l)].fc2.init_he(rng, 0.5f);
      if (pre_ln) {
        ln1[static_cast<size_t>(l)].init(dim, true);
        ln2[static_cast<size_t>(l)].init(dim, true);
      }
    }
    final_ln.init(dim, pre_ln);
  }

  Mat extract_patches(const Chw& img) const {
    const int pd = 3 * patch * patch;
    Mat patches(tokens - 1, pd);
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        float* row = patches.data() +
                     static_cast<size_t>(gy * grid + gx) * pd;
        int idx = 0;
        for (int c = 0; c < 3; ++c) {
          for (int py = 0; py < patch; ++py) {
            const float* src = img.plane(c) +
                               static_cast<size_t>(gy * patch + py) * img.w +
                               gx * patch;
            for (int px = 0; px < patch; ++px) row[idx++] = src[px];
          }
        }
      }
    }
    return patches;
  }

  Mat tokenize(const Chw& img) const {
    Mat x(tokens, dim);
    Eigen::Map<const Vec> cls_v(cls.data(), dim);
    Eigen::Map<const Mat> pos_m(pos.data(), tokens, dim);
    x.row(0) = cls_v.transpose();
    x.bottomRows(tokens - 1) = patch_embed.forward(extract_patches(img));
    x += pos_m;
    return x;
  }

  // Runs the encoder. attn_out collects per-layer/head probabilities;
  // stash keeps what backward needs; attn_override swaps probabilities for
  // (layer*heads + head) keys.
  Mat encode(const Chw& img, std::vector<Mat>* attn_out, VitStash* stash,
             const std::map<int, Mat>* attn_override = nullptr) const {
    Mat x = tokenize(img);
    if (stash) stash->layers.resize(static_cast<size_t>(layers));
    for (int l = 0; l < layers; ++l) {
      VitStash::Layer* ls = stash ? &stash->layers[static_cast<size_t>(l)] : nullptr;
      if (ls) ls->x_in = x;

      Mat attn_in;
      if (pre_ln) {
        attn_in = ln1[static_cast<size_t>(l)].forward(x);
        if (ls) ls->ln1_out = attn_in;
      }
      const Mat& ain = pre_ln ? attn_in : x;

      nn::AttentionTrace local_trace;
      nn::AttentionTrace* tr = (ls || attn_out) ? &local_trace : nullptr;

      std::vector<const Mat*> overrides;
      const std::vector<const Mat*>* ov = nullptr;
      if (attn_override) {
        overrides.assign(static_cast<size_t>(heads), nullptr);
        bool any = false;
        for (int h = 0; h < heads; ++h) {
          auto it = attn_override->find(l * heads + h);
          if (it != attn_override->end()) {
            overrides[static_cast<size_t>(h)] = &it->second;
            any = true;
          }
        }
        if (any) ov = &overrides;
      }

      Mat y = attn[static_cast<size_t>(l)].forward(ain, tr, ov);
      if (attn_out && tr) {
        for (int h = 0; h < heads; ++h) {
          attn_out->push_back(tr->probs[static_cast<size_t>(h)]);
        }
      }
      x += y;
      if (ls) {
        ls->atrace = std::move(local_trace);
        ls->x_mid = x;
      }

      Mat mlp_in;
      if (pre_ln) {
        mlp_in = ln2[static_cast<size_t>(l)].forward(x);
        if (ls) ls->ln2_out = mlp_in;
      }
      const Mat& min = pre_ln ? mlp_in : x;
      Mat hidden_pre;
      Mat z = mlp[static_cast<size_t>(l)].forward(min, ls ? &hidden_pre : nullptr);
      if (ls) ls->mlp_hidden_pre = std::move(hidden_pre);
      x += z;
    }
    if (stash) stash->x_final = x;
    return final_ln.forward(x);
  }

  // Backward from a gradient on the final normalized tokens down to the
  // embeddings; returns the embedding gradient. dprobs, when non-null,
  // receives per-layer/head gradients of the attention probabilities.
  // Weight gradients accumulate through gs.
  Mat backward(const VitStash& stash, const Mat& df,
               std::vector<Mat>* dprobs, GradSink* gs) const {
    std::vector<float>* dg_final =
        gs ? gs->find("backbone.final_ln.gamma") : nullptr;
    std::vector<float>* db_final =
        gs ? gs->find("backbone.final_ln.beta") : nullptr;
    Mat dx = final_ln.backward(stash.x_final, df, dg_final, db_final);
    if (dprobs) {
      dprobs->assign(static_cast<size_t>(layers) * heads, Mat());
    }
    for (int l = layers - 1; l >= 0; --l) {
      const auto& ls = stash.layers[static_cast<size_t>(l)];
      auto name = [&](const char* tag) {
        return "backbone.blocks." + std::to_string(l) + "." + tag;
      };

      // MLP sublayer
      const Mat& mlp_in = pre_ln ? ls.ln2_out : ls.x_mid;
      std::vector<float>* dw1 = gs ? gs->find(name("mlp.fc1.w")) : nullptr;
      std::vector<float>* db1 = gs ? gs->find(name("mlp.fc1.b")) : nullptr;
      std::vector<float>* dw2 = gs ? gs->find(name("mlp.fc2.w")) : nullptr;
      std::vector<float>* db2 = gs ? gs->find(name("mlp.fc2.b")) : nullptr;
      Mat dmlp_in = mlp[static_cast<size_t>(l)].backward(
          mlp_in, ls.mlp_hidden_pre, dx, dw1, db1, dw2, db2);
      Mat dx_mid = dx;
      if (pre_ln) {
        dx_mid += ln2[static_cast<size_t>(l)].backward(
            ls.x_mid, dmlp_in, gs ? gs->find(name("ln2.gamma")) : nullptr,
            gs ? gs->find(name("ln2.beta")) : nullptr);
      } else {
        dx_mid += dmlp_in;
      }

      // Attention sublayer
      std::vector<Mat> layer_dprobs;
      std::vector<float>* dwq = gs ? gs->find(name("attn.qkv.w")) : nullptr;
      std::vector<float>* dbq = gs ? gs->find(name("attn.qkv.b")) : nullptr;
      std::vector<float>* dwp = gs ? gs->find(name("attn.proj.w")) : nullptr;
      std::vector<float>* dbp = gs ? gs->find(name("attn.proj.b")) : nullptr;
      Mat dattn_in = attn[static_cast<size_t>(l)].backward(
          ls.atrace, dx_mid, dprobs ? &layer_dprobs : nullptr, dwq, dbq, dwp,
          dbp);
      if (dprobs) {
        for (int h = 0; h < heads; ++h) {
          (*dprobs)[static_cast<size_t>(l) * heads + h] =
              std::move(layer_dprobs[static_cast<size_t>(h)]);
        }
      }
      Mat dx_in = dx_mid;
      if (pre_ln) {
        dx_in += ln1[static_cast<size_t>(l)].backward(
            ls.x_in, dattn_in, gs ? gs->find(name("ln1.gamma")) : nullptr,
            gs ? gs->find(name("ln1.beta")) : nullptr);
      } else {
        dx_in += dattn_in;
      }
      dx = std::move(dx_in);
    }
    return dx;
  }
};

struct Backbone {
  std::unique_ptr<TinyCnnNet> tiny_cnn;
  std::unique_ptr<ResNetNet> resnet;
  std::unique_ptr<VitNet> vit;
};

}  // namespace detail

// ===========================================================================
// Classifier
// ===========================================================================

Classifier::Classifier() = default;
Classifier::~Classifier() = default;
Classifier::Classifier(Classifier&&) noexcept = default;
Classifier& Classifier::operator=(Classifier&&) noexcept = default;

namespace {

void check_input(const ModelSpec& spec, const Chw& img) {
  if (img.c != 3 || img.h != spec.image_size || img.w != spec.image_size) {
    throw ValidationError(
        "input must be 3x" + std::to_string(spec.image_size) + "x" +
        std::to_string(spec.image_size) + ", got " + std::to_string(img.c) +
        "x" + std::to_string(img.h) + "x" + std::to_string(img.w));
  }
}

}  // namespace

Classifier Classifier::build(const ModelSpec& spec_in, uint64_t seed) {
  ModelSpec spec = spec_in;
  spec.resolve();

  Classifier m;
  m.spec_ = spec;
  m.seed_ = seed;
  m.backbone_ = std::make_unique<detail::Backbone>();

  Rng bb_rng(mix64(seed, 0xbbu));
  if (spec.family == Family::cnn) {
    if (spec.scale == Scale::tiny) {
      m.backbone_->tiny_cnn = std::make_unique<detail::TinyCnnNet>();
      m.backbone_->tiny_cnn->init(spec.cnn_feature_dim, bb_rng);
    } else {
      if (spec.cnn_feature_dim != 2048) {
        throw ValidationError("full-scale cnn is ResNet-50 (feature dim 2048)");
      }
      m.backbone_->resnet = std::make_unique<detail::ResNetNet>();
      m.backbone_->resnet->init();
    }
  } else {
    m.backbone_->vit = std::make_unique<detail::VitNet>();
    m.backbone_->vit->init(spec, bb_rng);
  }

  // Head: fan-based uniform initialization, zero bias, seeded.
  Rng head_rng(mix64(seed, 0x4eadu));
  m.head_.init(spec.feature_dim(), spec.num_classes);
  m.head_.init_uniform(head_rng,
                       1.f / std::sqrt(static_cast<float>(spec.feature_dim())));

  if (spec.scale == Scale::full) {
    const char* backbone_name =
        spec.family == Family::cnn ? "resnet50" : "vit_b_16";
    if (spec.weights_file.empty()) {
      throw RuntimeFailure(
          std::string("pretrained weights for ") + backbone_name +
          " are required at full scale; set weights_file to a blob produced "
          "by tools/export_weights.py");
    }
    if (!fs::exists(spec.weights_file)) {
      throw RuntimeFailure(std::string("pretrained weights for ") +
                           backbone_name + " not found: " + spec.weights_file);
    }
    auto blob = load_tensor_blob(spec.weights_file);
    for (auto& p : m.params()) {
      if (p.name.rfind("backbone.", 0) != 0) continue;
      auto it = blob.find(p.name);
      if (it == blob.end()) {
        throw RuntimeFailure(std::string("weights file for ") + backbone_name +
                             " is missing tensor " + p.name);
      }
      if (it->second.size() != p.data->size()) {
        throw RuntimeFailure(std::string("weights file for ") + backbone_name +
                             ": tensor " + p.name + " has " +
                             std::to_string(it->second.size()) +
                             " values, expected " +
                             std::to_string(p.data->size()));
      }
      *p.data = it->second;
    }
  }
  return m;
}

Vec Classifier::backbone_features_one(const Chw& img) const {
  check_input(spec_, img);
  if (backbone_->tiny_cnn) {
    return nn::global_avg_pool(backbone_->tiny_cnn->run(img, nullptr));
  }
  if (backbone_->resnet) {
    return nn::global_avg_pool(backbone_->resnet->run(img, nullptr, 1 << 20));
  }
  Mat f = backbone_->vit->encode(img, nullptr, nullptr);
  return f.row(0).transpose();
}

Mat Classifier::backbone_features(const std::vector<Chw>& batch) const {
  Mat feats(static_cast<Eigen::Index>(batch.size()), spec_.feature_dim());
  parallel_for(static_cast<int>(batch.size()), [&](int i) {
    feats.row(i) = backbone_features_one(batch[static_cast<size_t>(i)]).transpose();
  });
  return feats;
}

Mat Classifier::head_logits(const Mat& feats) const {
  return head_.forward(feats);
}

Vec Classifier::forward_one(const Chw& img) const {
  Vec f = backbone_features_one(img);
  Mat logits = head_.forward(f.transpose());
  return logits.row(0).transpose();
}

Mat Classifier::forward(const std::vector<Chw>& batch) const {
  return head_logits(backbone_features(batch));
}

Mat Classifier::head_train(const Mat& feats, Rng& rng, Mat* dropped) const {
  Mat d = feats;
  const float p = spec_.family == Family::cnn ? spec_.dropout_p : 0.f;
  if (p > 0.f) {
    const float keep_inv = 1.f / (1.f - p);
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.cols(); ++c) {
        d(r, c) = rng.flip(p) ? 0.f : d(r, c) * keep_inv;
      }
    }
  }
  if (dropped) *dropped = d;
  return head_.forward(d);
}

void Classifier::head_backward(const Mat& dropped, const Mat& dlogits,
                               std::vector<float>& dw,
                               std::vector<float>& db) const {
  head_.backward(dropped, dlogits, &dw, &db);
}

// ---- unfrozen per-sample training -----------------------------------------

struct Classifier::FullStash {
  detail::TinyCnnNet::Stash cnn;
  detail::ResNetNet::Stash resnet;
  detail::VitStash vit;
  Mat patches;  // ViT patch matrix for the embedding weight gradient
  Chw last_act;
  Vec pooled;
  Mat dropped;  // 1 x D after dropout
};

std::pair<Vec, std::shared_ptr<Classifier::FullStash>>
Classifier::train_forward_full(const Chw& img, Rng& rng) const {
  check_input(spec_, img);
  auto stash_ptr = std::make_shared<FullStash>();
  FullStash& stash = *stash_ptr;
  Vec feat;
  if (backbone_->tiny_cnn) {
    stash.last_act = backbone_->tiny_cnn->run(img, &stash.cnn);
    feat = nn::global_avg_pool(stash.last_act);
  } else if (backbone_->resnet) {
    stash.last_act = backbone_->resnet->run(img, &stash.resnet, 0);
    feat = nn::global_avg_pool(stash.last_act);
  } else {
    Mat f = backbone_->vit->encode(img, nullptr, &stash.vit);
    feat = f.row(0).transpose();
    if (!spec_.freeze_backbone) {
      stash.patches = backbone_->vit->extract_patches(img);
    }
  }
  stash.pooled = feat;
  Mat logits = head_train(feat.transpose(), rng, &stash.dropped);
  return {logits.row(0).transpose(), std::move(stash_ptr)};
}

void Classifier::train_backward_full(const FullStash& stash,
                                     const Vec& dlogits,
                                     GradBuffers& grads) const {
  auto tp = const_cast<Classifier*>(this)->trainable_params();
  detail::GradSink gs;
  for (size_t i = 0; i < tp.size(); ++i) {
    gs.by_name[tp[i].name] = &grads.g[i];
  }

  // Head
  Mat dlog = dlogits.transpose();
  std::vector<float>* dw = gs.find("head.fc.w");
  std::vector<float>* db = gs.find("head.fc.b");
  Mat dfeat_row = head_.backward(stash.dropped, dlog, dw, db);

  if (spec_.freeze_backbone) return;

  // Undo dropout scaling on the path back into the backbone: the mask is
  // recoverable by comparing dropped features with pooled ones.
  Vec dfeat = dfeat_row.row(0).transpose();
  const float p = spec_.family == Family::cnn ? spec_.dropout_p : 0.f;
  if (p > 0.f) {
    const float keep_inv = 1.f / (1.f - p);
    for (Eigen::Index i = 0; i < dfeat.size(); ++i) {
      dfeat(i) = stash.dropped(0, i) == 0.f && stash.pooled(i) != 0.f
                     ? 0.f
                     : dfeat(i) * keep_inv;
    }
  }

  if (backbone_->tiny_cnn) {
    const auto& net = *backbone_->tiny_cnn;
    const auto& st = stash.cnn;
    Chw d3 = nn::global_avg_pool_backward(dfeat, stash.last_act.c,
                                          stash.last_act.h, stash.last_act.w);
    d3 = nn::relu_backward(st.p3, d3);
    Chw a2 = st.p2;
    nn::relu_inplace(a2);
    if (auto* g = gs.find("backbone.conv3.w")) {
      net.c3.backward_weights(a2, d3, *g, *gs.find("backbone.conv3.b"));
    }
    Chw d2 = net.c3.backward_data(d3, st.p2.h, st.p2.w);
    d2 = nn::relu_backward(st.p2, d2);
    Chw a1 = st.p1;
    nn::relu_inplace(a1);
    if (auto* g = gs.find("backbone.conv2.w")) {
      net.c2.backward_weights(a1, d2, *g, *gs.find("backbone.conv2.b"));
    }
    Chw d1 = net.c2.backward_data(d2, st.p1.h, st.p1.w);
    d1 = nn::relu_backward(st.p1, d1);
    if (auto* g = gs.find("backbone.conv1.w")) {
      net.c1.backward_weights(st.x0, d1, *g, *gs.find("backbone.conv1.b"));
    }
  } else if (backbone_->resnet) {
    const auto& net = *backbone_->resnet;
    const auto& st = stash.resnet;
    Chw d = nn::global_avg_pool_backward(dfeat, stash.last_act.c,
                                         stash.last_act.h, stash.last_act.w);
    for (int i = static_cast<int>(net.blocks.size()) - 1; i >= 0; --i) {
      d = net.blocks[static_cast<size_t>(i)].backward(
          st.block_stash[static_cast<size_t>(i)], d, &gs,
          "backbone." + net.names[static_cast<size_t>(i)]);
    }
    d = nn::max_pool_backward(d, st.pool_argmax, st.pool_in.c, st.pool_in.h,
                              st.pool_in.w);
    d = nn::relu_backward(st.stem_pre, d);
    if (auto* g = gs.find("backbone.stem.w")) {
      net.stem.backward_weights(st.x0, d, *g, *gs.find("backbone.stem.b"));
    }
  } else {
    // ViT: seed the CLS row of the final-norm gradient.
    const auto& net = *backbone_->vit;
    Mat df(net.tokens, net.dim);
    df.setZero();
    df.row(0) = dfeat.transpose();
    Mat dx = net.backward(stash.vit, df, nullptr, &gs);
    if (auto* dpos = gs.find("backbone.pos")) {
      Eigen::Map<Mat> DP(dpos->data(), net.tokens, net.dim);
      DP += dx;
    }
    if (auto* dcls = gs.find("backbone.cls")) {
      Eigen::Map<Vec> DC(dcls->data(), net.dim);
      DC += dx.row(0).transpose();
    }
    auto* dwpe = gs.find("backbone.patch.w");
    auto* dbpe = gs.find("backbone.patch.b");
    if ((dwpe || dbpe) && stash.patches.rows() > 0) {
      Mat dtokens = dx.bottomRows(net.tokens - 1);
      if (dwpe) {
        Eigen::Map<Mat> DW(dwpe->data(), net.dim, 3 * net.patch * net.patch);
        DW.noalias() += dtokens.transpose() * stash.patches;
      }
      if (dbpe) {
        Eigen::Map<Vec> DB(dbpe->data(), net.dim);
        DB.noalias() += dtokens.colwise().sum().transpose();
      }
    }
  }
}

// ---- capture hooks ---------------------------------------------------------

std::vector<std::string> Classifier::capture_layer_names() const {
  if (backbone_->tiny_cnn) return {"conv1", "conv2", "conv3"};
  if (backbone_->resnet) return backbone_->resnet->names;
  return {};
}

std::string Classifier::default_target_layer() const {
  return spec_.target_layer;
}

CamContext Classifier::cam_capture(const Chw& img, int target_class,
                                   const std::string& layer,
                                   const Chw* activation_offset,
                                   float* score_out) const {
  if (spec_.family != Family::cnn) {
    throw ValidationError("activation capture requires a cnn model");
  }
  check_input(spec_, img);
  if (target_class < 0 || target_class >= spec_.num_classes) {
    throw ValidationError("target class out of range");
  }
  const std::string target = layer.empty() ? spec_.target_layer : layer;
  auto names = capture_layer_names();
  auto pos = std::find(names.begin(), names.end(), target);
  if (pos == names.end()) {
    throw ValidationError("unknown capture layer: " + target);
  }
  const int target_idx = static_cast<int>(pos - names.begin());

  CamContext ctx;
  ctx.target_class = target_class;

  Chw acts;          // post-ReLU activations at the capture point
  Chw after;         // final feature maps feeding the pooling
  // Stashes for backward through the blocks after the capture point.
  detail::TinyCnnNet::Stash tstash;
  detail::ResNetNet::Stash rstash;

  if (backbone_->tiny_cnn) {
    const auto& net = *backbone_->tiny_cnn;
    tstash.x0 = img;
    Chw a = net.c1.forward(img);
    tstash.p1 = a;
    nn::relu_inplace(a);
    if (target_idx == 0 && activation_offset) {
      for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += activation_offset->v[i];
    }
    if (target_idx == 0) acts = a;
    Chw b = net.c2.forward(a);
    tstash.p2 = b;
    nn::relu_inplace(b);
    if (target_idx == 1 && activation_offset) {
      for (size_t i = 0; i < b.v.size(); ++i) b.v[i] += activation_offset->v[i];
    }
    if (target_idx == 1) acts = b;
    Chw c = net.c3.forward(b);
    tstash.p3 = c;
    nn::relu_inplace(c);
    if (target_idx == 2 && activation_offset) {
      for (size_t i = 0; i < c.v.size(); ++i) c.v[i] += activation_offset->v[i];
    }
    if (target_idx == 2) acts = c;
    after = c;
  } else {
    const auto& net = *backbone_->resnet;
    Chw x = net.stem.forward(img);
    nn::relu_inplace(x);
    x = nn::max_pool(x, 3, 2, 1);
    rstash.block_stash.resize(net.blocks.size());
    rstash.first_stashed = target_idx + 1;
    for (size_t i = 0; i < net.blocks.size(); ++i) {
      detail::Bottleneck::Stash* bs =
          static_cast<int>(i) > target_idx ? &rstash.block_stash[i] : nullptr;
      x = net.blocks[i].run(x, bs);
      if (static_cast<int>(i) == target_idx) {
        if (activation_offset) {
          for (size_t j = 0; j < x.v.size(); ++j) {
            x.v[j] += activation_offset->v[j];
          }
        }
        acts = x;
      }
    }
    after = x;
  }

  // Score and its gradient back to the capture point. The head is evaluated
  // without dropout (capture runs in evaluation mode).
  Vec pooled = nn::global_avg_pool(after);
  Mat logits = head_.forward(pooled.transpose());
  if (score_out) *score_out = logits(0, target_class);

  Eigen::Map<const Mat> W(head_.w.data(), head_.out, head_.in);
  Vec dpooled = W.row(target_class).transpose();
  Chw d = nn::global_avg_pool_backward(dpooled, after.c, after.h, after.w);

  if (backbone_->tiny_cnn) {
    const auto& net = *backbone_->tiny_cnn;
    if (target_idx <= 1) {
      d = nn::relu_backward(tstash.p3, d);
      d = net.c3.backward_data(d, tstash.p2.h, tstash.p2.w);
    }
    if (target_idx == 0) {
      d = nn::relu_backward(tstash.p2, d);
      d = net.c2.backward_data(d, tstash.p1.h, tstash.p1.w);
    }
  } else {
    const auto& net = *backbone_->resnet;
    for (int i = static_cast<int>(net.blocks.size()) - 1; i > target_idx; --i) {
      d = net.blocks[static_cast<size_t>(i)].backward(
          rstash.block_stash[static_cast<size_t>(i)], d, nullptr, "");
    }
  }

  ctx.activations = std::move(acts);
  ctx.gradients = std::move(d);
  return ctx;
}

AttentionStack Classifier::attention_capture(
    const Chw& img, bool with_grads, int target_class,
    const std::map<int, Mat>* attn_override) const {
  if (spec_.family != Family::vit) {
    throw ValidationError("attention capture requires a vit model");
  }
  check_input(spec_, img);
  const auto& net = *backbone_->vit;

  AttentionStack stack;
  stack.layers = net.layers;
  stack.heads = net.heads;
  stack.tokens = net.tokens;
  stack.patch_grid = net.grid;

  detail::VitStash stash;
  Mat f = net.encode(img, &stack.attn, with_grads ? &stash : nullptr,
                     attn_override);

  if (with_grads) {
    if (target_class < 0 || target_class >= spec_.num_classes) {
      throw ValidationError("target class out of range");
    }
    Eigen::Map<const Mat> W(head_.w.data(), head_.out, head_.in);
    Mat df(net.tokens, net.dim);
    df.setZero();
    df.row(0) = W.row(target_class);
    net.backward(stash, df, &stack.grads, nullptr);
  }
  return stack;
}

// ---- parameters ------------------------------------------------------------

namespace {

void push(std::vector<nn::Param>& out, const std::string& name,
          std::vector<float>* v, bool trainable) {
  out.push_back({name, v, trainable});
}

}  // namespace

std::vector<nn::Param> Classifier::params() {
  std::vector<nn::Param> out;
  const bool bt = !spec_.freeze_backbone;
  if (backbone_->tiny_cnn) {
    auto& n = *backbone_->tiny_cnn;
    push(out, "backbone.conv1.w", &n.c1.w, bt);
    push(out, "backbone.conv1.b", &n.c1.b, bt);
    push(out, "backbone.conv2.w", &n.c2.w, bt);
    push(out, "backbone.conv2.b", &n.c2.b, bt);
    push(out, "backbone.conv3.w", &n.c3.w, bt);
    push(out, "backbone.conv3.b", &n.c3.b, bt);
  } else if (backbone_->resnet) {
    auto& n = *backbone_->resnet;
    push(out, "backbone.stem.w", &n.stem.w, bt);
    push(out, "backbone.stem.b", &n.stem.b, bt);
    for (size_t i = 0; i < n.blocks.size(); ++i) {
      const std::string p = "backbone." + n.names[i];
      auto& b = n.blocks[i];
      push(out, p + ".conv1.w", &b.conv1.w, bt);
      push(out, p + ".conv1.b", &b.conv1.b, bt);
      push(out, p + ".conv2.w", &b.conv2.w, bt);
      push(out, p + ".conv2.b", &b.conv2.b, bt);
      push(out, p + ".conv3.w", &b.conv3.w, bt);
      push(out, p + ".conv3.b", &b.conv3.b, bt);
      if (b.has_down) {
        push(out, p + ".down.w", &b.down.w, bt);
        push(out, p + ".down.b", &b.down.b, bt);
      }
    }
  } else {
    auto& n = *backbone_->vit;
    push(out, "backbone.patch.w", &n.patch_embed.w, bt);
    push(out, "backbone.patch.b", &n.patch_embed.b, bt);
    push(out, "backbone.cls", &n.cls, bt);
    push(out, "backbone.pos", &n.pos, bt);
    for (int l = 0; l < n.layers; ++l) {
      const std::string p = "backbone.blocks." + std::to_string(l);
      auto& a = n.attn[static_cast<size_t>(l)];
      auto& m = n.mlp[static_cast<size_t>(l)];
      if (n.pre_ln) {
        push(out, p + ".ln1.gamma", &n.ln1[static_cast<size_t>(l)].gamma, bt);
        push(out, p + ".ln1.beta", &n.ln1[static_cast<size_t>(l)].beta, bt);
      }
      push(out, p + ".attn.qkv.w", &a.qkv.w, bt);
      push(out, p + ".attn.qkv.b", &a.qkv.b, bt);
      push(out, p + ".attn.proj.w", &a.proj.w, bt);
      push(out, p + ".attn.proj.b", &a.proj.b, bt);
      if (n.pre_ln) {
        push(out, p + ".ln2.gamma", &n.ln2[static_cast<size_t>(l)].gamma, bt);
        push(out, p + ".ln2.beta", &n.ln2[static_cast<size_t>(l)].beta, bt);
      }
      push(out, p + ".mlp.fc1.w", &m.fc1.w, bt);
      push(out, p + ".mlp.fc1.b", &m.fc1.b, bt);
      push(out, p + ".mlp.fc2.w", &m.fc2.w, bt);
      push(out, p + ".mlp.fc2.b", &m.fc2.b, bt);
    }
    if (n.pre_ln) {
      push(out, "backbone.final_ln.gamma", &n.final_ln.gamma, bt);
      push(out, "backbone.final_ln.beta", &n.final_ln.beta, bt);
    }
  }
  push(out, "head.fc.w", &head_.w, true);
  push(out, "head.fc.b", &head_.b, true);
  return out;
}

std::vector<nn::Param> Classifier::params() const {
  return const_cast<Classifier*>(this)->params();
}

std::vector<nn::Param> Classifier::trainable_params() {
  std::vector<nn::Param> out;
  for (auto& p : params()) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

// ---- blob I/O ---------------------------------------------------------------

namespace {
constexpr char kBlobMagic[6] = {'S', 'N', 'T', 'B', '1', '\n'};
}

void save_tensor_blob(const fs::path& file,
                      const std::vector<nn::Param>& params) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write blob: " + file.string());
  out.write(kBlobMagic, sizeof(kBlobMagic));
  uint32_t count = static_cast<uint32_t>(params.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : params) {
    uint32_t len = static_cast<uint32_t>(p.name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(p.name.data(), len);
    uint64_t numel = p.data->size();
    out.write(reinterpret_cast<const char*>(&numel), sizeof(numel));
    out.write(reinterpret_cast<const char*>(p.data->data()),
              static_cast<std::streamsize>(numel * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("short write on blob: " + file.string());
}

std::map<std::string, std::vector<float>> load_tensor_blob(
    const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open blob: " + file.string());
  char magic[6];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
    throw RuntimeFailure("not a parameter blob: " + file.string());
  }
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::map<std::string, std::vector<float>> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint64_t numel = 0;
    in.read(reinterpret_cast<char*>(&numel), sizeof(numel));
    std::vector<float> v(numel);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!in) {
      throw RuntimeFailure("truncated blob: " + file.string());
    }
    out.emplace(std::move(name), std::move(v));
  }
  return out;
}

void Classifier::save_params(const fs::path& file) const {
  save_tensor_blob(file, params());
}

void Classifier::load_params(const fs::path& file) {
  auto blob = load_tensor_blob(file);
  auto ps = params();
  if (blob.size() != ps.size()) {
    throw ValidationError("checkpoint parameter count mismatch for " +
                          file.string());
  }
  for (auto& p : ps) {
    auto it = blob.find(p.name);
    if (it == blob.end() || it->second.size() != p.data->size()) {
      throw ValidationError("checkpoint incompatible with model spec: " +
                            p.name);
    }
    *p.data = std::move(it->second);
  }
}

Mat predict_proba(const Mat& logits) {
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits.data()[i])) {
      throw ValidationError("predict_proba requires finite logits");
    }
  }
  return nn::softmax_rows(logits);
}

}  // namespace sentinel::model
