#include "sentinel/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sentinel::nn {

namespace {
constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
}  // namespace

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

void Linear::init(int in_, int out_) {
  in = in_;
  out = out_;
  w.assign(static_cast<size_t>(in) * out, 0.f);
  b.assign(static_cast<size_t>(out), 0.f);
}

void Linear::init_uniform(Rng& rng, float bound) {
  for (auto& v : w) v = rng.uniform(-bound, bound);
  for (auto& v : b) v = 0.f;
}

void Linear::init_he(Rng& rng, float gain) {
  const float bound = gain * std::sqrt(6.f / static_cast<float>(in));
  init_uniform(rng, bound);
}

Mat Linear::forward(const Mat& x) const {
  Eigen::Map<const Mat> W(w.data(), out, in);
  Mat y = x * W.transpose();
  Eigen::Map<const Vec> B(b.data(), out);
  y.rowwise() += B.transpose();
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy, std::vector<float>* dw,
                     std::vector<float>* db) const {
  Eigen::Map<const Mat> W(w.data(), out, in);
  if (dw) {
    Eigen::Map<Mat> DW(dw->data(), out, in);
    DW.noalias() += dy.transpose() * x;
  }
  if (db) {
    Eigen::Map<Vec> DB(db->data(), out);
    DB.noalias() += dy.colwise().sum().transpose();
  }
  return dy * W;
}

// ---------------------------------------------------------------------------
// Conv2d (im2col + GEMM)
// ---------------------------------------------------------------------------

void Conv2d::init(int in_c_, int out_c_, int k_, int stride_, int pad_) {
  in_c = in_c_;
  out_c = out_c_;
  k = k_;
  stride = stride_;
  pad = pad_;
  w.assign(static_cast<size_t>(out_c) * in_c * k * k, 0.f);
  b.assign(static_cast<size_t>(out_c), 0.f);
}

void Conv2d::init_he(Rng& rng) {
  const float bound = std::sqrt(6.f / static_cast<float>(in_c * k * k));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  for (auto& v : b) v = 0.f;
}

namespace {

Mat im2col(const Chw& x, int k, int stride, int pad, int oh, int ow) {
  const int rows = x.c * k * k;
  Mat cols(rows, oh * ow);
  cols.setZero();
  for (int c = 0; c < x.c; ++c) {
    const float* plane = x.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        float* dst = cols.data() + static_cast<size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          const float* srow = plane + static_cast<size_t>(iy) * x.w;
          float* drow = dst + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < x.w) drow[ox] = srow[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Mat& cols, int c_in, int h, int w, int k, int stride,
                int pad, int oh, int ow, Chw& out) {
  for (int c = 0; c < c_in; ++c) {
    float* plane = out.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        const float* src = cols.data() + static_cast<size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* drow = plane + static_cast<size_t>(iy) * w;
          const float* srow = src + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Chw Conv2d::forward(const Chw& x) const {
  if (x.c != in_c) throw ValidationError("conv input channel mismatch");
  const int oh = out_h(x.h), ow = out_w(x.w);
  Mat cols = im2col(x, k, stride, pad, oh, ow);
  Chw y(out_c, oh, ow);
  Eigen::Map<const Mat> W(w.data(), out_c, in_c * k * k);
  Eigen::Map<Mat> Y(y.v.data(), out_c, oh * ow);
  Y.noalias() = W * cols;
  for (int c = 0; c < out_c; ++c) {
    Y.row(c).array() += b[static_cast<size_t>(c)];
  }
  return y;
}

Chw Conv2d::backward_data(const Chw& dy, int in_h, int in_w) const {
  const int oh = dy.h, ow = dy.w;
  Eigen::Map<const Mat> W(w.data(), out_c, in_c * k * k);
  Eigen::Map<const Mat> DY(dy.v.data(), out_c, oh * ow);
  Mat dcols = W.transpose() * DY;
  Chw dx(in_c, in_h, in_w);
  col2im_add(dcols, in_c, in_h, in_w, k, stride, pad, oh, ow, dx);
  return dx;
}

void Conv2d::backward_weights(const Chw& x, const Chw& dy,
                              std::vector<float>& dw,
                              std::vector<float>& db) const {
  const int oh = dy.h, ow = dy.w;
  Mat cols = im2col(x, k, stride, pad, oh, ow);
  Eigen::Map<const Mat> DY(dy.v.data(), out_c, oh * ow);
  Eigen::Map<Mat> DW(dw.data(), out_c, in_c * k * k);
  DW.noalias() += DY * cols.transpose();
  for (int c = 0; c < out_c; ++c) {
    db[static_cast<size_t>(c)] += DY.row(c).sum();
  }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

void LayerNorm::init(int dim_, bool affine_, float eps_) {
  dim = dim_;
  affine = affine_;
  eps = eps_;
  if (affine) {
    gamma.assign(static_cast<size_t>(dim), 1.f);
    beta.assign(static_cast<size_t>(dim), 0.f);
  }
}

Mat LayerNorm::forward(const Mat& x) const {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= x.cols();
    double var = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double d = x(r, c) - mean;
      var += d * d;
    }
    var /= x.cols();
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double v = (x(r, c) - mean) * inv;
      if (affine) v = v * gamma[static_cast<size_t>(c)] + beta[static_cast<size_t>(c)];
      y(r, c) = static_cast<float>(v);
    }
  }
  return y;
}

Mat LayerNorm::backward(const Mat& x, const Mat& dy, std::vector<float>* dgamma,
                        std::vector<float>* dbeta) const {
  const Eigen::Index n = x.cols();
  Mat dx(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0;
    for (Eigen::Index c = 0; c < n; ++c) mean += x(r, c);
    mean /= n;
    double var = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
      double d = x(r, c) - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    double sum_dxhat = 0, sum_dxhat_xhat = 0;
    std::vector<double> dxhat(static_cast<size_t>(n));
    for (Eigen::Index c = 0; c < n; ++c) {
      const double g_raw = dy(r, c);
      double g = g_raw;
      if (affine) g *= gamma[static_cast<size_t>(c)];
      const double xhat = (x(r, c) - mean) * inv;
      if (dgamma) (*dgamma)[static_cast<size_t>(c)] += static_cast<float>(g_raw * xhat);
      if (dbeta) (*dbeta)[static_cast<size_t>(c)] += static_cast<float>(g_raw);
      dxhat[static_cast<size_t>(c)] = g;
      sum_dxhat += g;
      sum_dxhat_xhat += g * xhat;
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      const double xhat = (x(r, c) - mean) * inv;
      double v = (dxhat[static_cast<size_t>(c)] - sum_dxhat / n -
                  xhat * sum_dxhat_xhat / n) * inv;
      dx(r, c) = static_cast<float>(v);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations / pooling
// ---------------------------------------------------------------------------

void relu_inplace(Chw& x) {
  for (auto& v : x.v) v = v > 0.f ? v : 0.f;
}

Chw relu_backward(const Chw& pre, const Chw& dy) {
  Chw dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i) {
    if (pre.v[i] <= 0.f) dx.v[i] = 0.f;
  }
  return dx;
}

Mat gelu(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const float v = x.data()[i];
    y.data()[i] = 0.5f * v * (1.f + std::erf(v * kInvSqrt2));
  }
  return y;
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  Mat dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const float v = x.data()[i];
    const float cdf = 0.5f * (1.f + std::erf(v * kInvSqrt2));
    const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
    dx.data()[i] = dy.data()[i] * (cdf + v * pdf);
  }
  return dx;
}

Mat softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float mx = x.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double e = std::exp(static_cast<double>(x(r, c)) - mx);
      y(r, c) = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y(r, c) = static_cast<float>(y(r, c) * inv);
    }
  }
  return y;
}

Mat softmax_backward_rows(const Mat& y, const Mat& dy) {
  Mat dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double dot = 0;
    for (Eigen::Index c = 0; c < y.cols(); ++c) dot += y(r, c) * dy(r, c);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      dx(r, c) = static_cast<float>(y(r, c) * (dy(r, c) - dot));
    }
  }
  return dx;
}

Chw max_pool(const Chw& x, int k, int stride, int pad,
             std::vector<int>* argmax) {
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  Chw y(x.c, oh, ow);
  if (argmax) argmax->assign(static_cast<size_t>(x.c) * oh * ow, -1);
  for (int c = 0; c < x.c; ++c) {
    const float* plane = x.plane(c);
    float* out = y.plane(c);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            const float v = plane[static_cast<size_t>(iy) * x.w + ix];
            if (v > best) {
              best = v;
              best_idx = iy * x.w + ix;
            }
          }
        }
        out[static_cast<size_t>(oy) * ow + ox] = best;
        if (argmax) {
          (*argmax)[(static_cast<size_t>(c) * oh + oy) * ow + ox] = best_idx;
        }
      }
    }
  }
  return y;
}

Chw max_pool_backward(const Chw& dy, const std::vector<int>& argmax, int in_c,
                      int in_h, int in_w) {
  Chw dx(in_c, in_h, in_w);
  for (int c = 0; c < dy.c; ++c) {
    const float* g = dy.plane(c);
    float* out = dx.plane(c);
    const size_t n = static_cast<size_t>(dy.h) * dy.w;
    for (size_t i = 0; i < n; ++i) {
      const int idx = argmax[static_cast<size_t>(c) * n + i];
      if (idx >= 0) out[idx] += g[i];
    }
  }
  return dx;
}

Vec global_avg_pool(const Chw& x) {
  Vec out(x.c);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int c = 0; c < x.c; ++c) {
    const float* plane = x.plane(c);
    double sum = 0;
    const size_t n = static_cast<size_t>(x.h) * x.w;
    for (size_t i = 0; i < n; ++i) sum += plane[i];
    out(c) = static_cast<float>(sum * inv);
  }
  return out;
}

Chw global_avg_pool_backward(const Vec& dpooled, int c, int h, int w) {
  Chw dx(c, h, w);
  const float inv = 1.f / (static_cast<float>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    float* plane = dx.plane(ci);
    const float g = dpooled(ci) * inv;
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < n; ++i) plane[i] = g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

void MultiHeadAttention::init(int dim_, int heads_) {
  dim = dim_;
  heads = heads_;
  if (dim % heads != 0) {
    throw ValidationError("attention dim must be divisible by heads");
  }
  qkv.init(dim, 3 * dim);
  proj.init(dim, dim);
}

Mat MultiHeadAttention::forward(const Mat& x, AttentionTrace* trace,
                                const std::vector<const Mat*>* prob_override) const {
  const int T = static_cast<int>(x.rows());
  const int dh = dim / heads;
  const float scale = 1.f / std::sqrt(static_cast<float>(dh));

  Mat qkv_out = qkv.forward(x);  // T x 3dim
  Mat concat(T, dim);
  std::vector<Mat> probs;
  probs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto Q = qkv_out.block(0, h * dh, T, dh);
    auto K = qkv_out.block(0, dim + h * dh, T, dh);
    auto V = qkv_out.block(0, 2 * dim + h * dh, T, dh);
    Mat scores = (Q * K.transpose()) * scale;
    Mat P = softmax_rows(scores);
    if (prob_override && (*prob_override)[static_cast<size_t>(h)]) {
      P = *(*prob_override)[static_cast<size_t>(h)];
    }
    concat.block(0, h * dh, T, dh).noalias() = P * V;
    if (trace) probs.push_back(std::move(P));
  }
  Mat y = proj.forward(concat);
  if (trace) {
    trace->x_in = x;
    trace->qkv = std::move(qkv_out);
    trace->probs = std::move(probs);
    trace->concat_out = std::move(concat);
  }
  return y;
}

Mat MultiHeadAttention::backward(const AttentionTrace& trace, const Mat& dy,
                                 std::vector<Mat>* dprobs_out,
                                 std::vector<float>* dw_qkv,
                                 std::vector<float>* db_qkv,
                                 std::vector<float>* dw_proj,
                                 std::vector<float>* db_proj) const {
  const int T = static_cast<int>(trace.x_in.rows());
  const int dh = dim / heads;
  const float scale = 1.f / std::sqrt(static_cast<float>(dh));

  Mat dconcat = proj.backward(trace.concat_out, dy, dw_proj, db_proj);

  Mat dqkv(T, 3 * dim);
  dqkv.setZero();
  if (dprobs_out) dprobs_out->clear();
  for (int h = 0; h < heads; ++h) {
    auto Q = trace.qkv.block(0, h * dh, T, dh);
    auto K = trace.qkv.block(0, dim + h * dh, T, dh);
    auto V = trace.qkv.block(0, 2 * dim + h * dh, T, dh);
    const Mat& P = trace.probs[static_cast<size_t>(h)];
    auto dO = dconcat.block(0, h * dh, T, dh);

    Mat dP = dO * V.transpose();
    if (dprobs_out) dprobs_out->push_back(dP);
    Mat dV = P.transpose() * dO;
    Mat dS = softmax_backward_rows(P, dP);
    dS *= scale;
    dqkv.block(0, h * dh, T, dh).noalias() = dS * K;
    dqkv.block(0, dim + h * dh, T, dh).noalias() = dS.transpose() * Q;
    dqkv.block(0, 2 * dim + h * dh, T, dh) = dV;
  }
  return qkv.backward(trace.x_in, dqkv, dw_qkv, db_qkv);
}

// ---------------------------------------------------------------------------
// MLP block
// ---------------------------------------------------------------------------

void MlpBlock::init(int dim, int hidden) {
  fc1.init(dim, hidden);
  fc2.init(hidden, dim);
}

Mat MlpBlock::forward(const Mat& x, Mat* hidden_pre) const {
  Mat h = fc1.forward(x);
  if (hidden_pre) *hidden_pre = h;
  return fc2.forward(gelu(h));
}

Mat MlpBlock::backward(const Mat& x, const Mat& hidden_pre, const Mat& dy,
                       std::vector<float>* dw1, std::vector<float>* db1,
                       std::vector<float>* dw2, std::vector<float>* db2) const {
  Mat hidden_act = gelu(hidden_pre);
  Mat dhidden_act = fc2.backward(hidden_act, dy, dw2, db2);
  Mat dhidden = gelu_backward(hidden_pre, dhidden_act);
  return fc1.backward(x, dhidden, dw1, db1);
}

}  // namespace sentinel::nn
