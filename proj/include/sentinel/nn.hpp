#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sentinel/core.hpp"
#include "sentinel/image.hpp"

namespace sentinel::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;

/// Named view into a module's raw parameter storage.
struct Param {
  std::string name;
  std::vector<float>* data = nullptr;
  bool trainable = false;
};

// ---------------------------------------------------------------------------
// Dense / conv primitives. Weight layouts match the usual (out, in, kh, kw)
// and (out, in) conventions so exported checkpoints load without reshuffling.
// ---------------------------------------------------------------------------

struct Linear {
  int in = 0, out = 0;
  std::vector<float> w;  // out x in, row-major
  std::vector<float> b;  // out

  void init(int in_, int out_);
  void init_uniform(Rng& rng, float bound);  // U(-bound, bound), bias zero
  void init_he(Rng& rng, float gain = 1.f);

  /// y = x . w^T + b  for a row-major token matrix x (rows are tokens).
  Mat forward(const Mat& x) const;
  /// dx = dy . w ; accumulates dw += dy^T . x and db += colsum(dy).
  Mat backward(const Mat& x, const Mat& dy, std::vector<float>* dw = nullptr,
               std::vector<float>* db = nullptr) const;
};

struct Conv2d {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  std::vector<float> w;  // out_c x (in_c*k*k)
  std::vector<float> b;  // out_c

  void init(int in_c_, int out_c_, int k_, int stride_, int pad_);
  void init_he(Rng& rng);

  int out_h(int in_h) const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad - k) / stride + 1; }

  Chw forward(const Chw& x) const;
  /// Input gradient from output gradient (col2im of w^T . dy).
  Chw backward_data(const Chw& dy, int in_h, int in_w) const;
  void backward_weights(const Chw& x, const Chw& dy, std::vector<float>& dw,
                        std::vector<float>& db) const;
};

struct LayerNorm {
  int dim = 0;
  float eps = 1e-6f;
  bool affine = false;
  std::vector<float> gamma, beta;

  void init(int dim_, bool affine_, float eps_ = 1e-6f);
  /// Normalizes each row of x independently.
  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy,
               std::vector<float>* dgamma = nullptr,
               std::vector<float>* dbeta = nullptr) const;
};

void relu_inplace(Chw& x);
Chw relu_backward(const Chw& pre, const Chw& dy);

Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

/// Row-wise softmax with double accumulation, so row sums hold to ~1e-12.
Mat softmax_rows(const Mat& x);
/// dS for y = softmax(x) rows: dx = y .* (dy - rowsum(dy .* y)).
Mat softmax_backward_rows(const Mat& y, const Mat& dy);

Chw max_pool(const Chw& x, int k, int stride, int pad,
             std::vector<int>* argmax = nullptr);
Chw max_pool_backward(const Chw& dy, const std::vector<int>& argmax, int in_c,
                      int in_h, int in_w);
Vec global_avg_pool(const Chw& x);
/// Spreads a pooled-feature gradient uniformly over spatial positions.
Chw global_avg_pool_backward(const Vec& dpooled, int c, int h, int w);

// ---------------------------------------------------------------------------
// Transformer pieces
// ---------------------------------------------------------------------------

/// Per-layer intermediates kept only while a capture or backward pass needs
/// them.
struct AttentionTrace {
  Mat x_in;          // tokens before the attention sublayer (post-LN if any)
  Mat qkv;           // T x 3*dim
  std::vector<Mat> probs;  // per head, T x T row-stochastic
  Mat concat_out;    // T x dim, before the output projection
};

struct MultiHeadAttention {
  int dim = 0, heads = 0;
  Linear qkv;
  Linear proj;

  void init(int dim_, int heads_);
  /// x: T x dim. When trace is non-null the attention probabilities and the
  /// tensors backward needs are recorded. prob_override, when given, swaps in
  /// an externally supplied matrix for a head's attention probabilities
  /// (finite-difference instrumentation).
  Mat forward(const Mat& x, AttentionTrace* trace,
              const std::vector<const Mat*>* prob_override = nullptr) const;

  /// Backward through the sublayer. dprobs_out, when non-null, receives
  /// d(score)/d(attention probabilities) per head before the softmax
  /// backward, which is what gradient-weighted rollout consumes.
  Mat backward(const AttentionTrace& trace, const Mat& dy,
               std::vector<Mat>* dprobs_out,
               std::vector<float>* dw_qkv = nullptr,
               std::vector<float>* db_qkv = nullptr,
               std::vector<float>* dw_proj = nullptr,
               std::vector<float>* db_proj = nullptr) const;
};

struct MlpBlock {
  Linear fc1, fc2;

  void init(int dim, int hidden);
  Mat forward(const Mat& x, Mat* hidden_pre = nullptr) const;
  Mat backward(const Mat& x, const Mat& hidden_pre, const Mat& dy,
               std::vector<float>* dw1 = nullptr, std::vector<float>* db1 = nullptr,
               std::vector<float>* dw2 = nullptr, std::vector<float>* db2 = nullptr) const;
};

}  // namespace sentinel::nn
