#pragma once

#include <vector>

#include "tsgan/tensor.hpp"

namespace tsgan {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor mul_scalar(const Tensor& a, Scalar s);

Tensor square(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor clamp_min(const Tensor& a, Scalar lo);
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope = 0.2);
Tensor sigmoid(const Tensor& a);
Tensor tanh_(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Rank-2 [n x k] * [k x m].
Tensor matmul(const Tensor& a, const Tensor& b);
// x [n x d], w [d x m], b [m] -> [n x m].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [N,C,H,W], w [F,C,kh,kw], b [F]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Nearest-neighbour 2x spatial upsampling.
Tensor upsample2(const Tensor& x);

// Global average pooling [N,C,H,W] -> [N,C].
Tensor gap2d(const Tensor& x);

// [N,1,H,W] -> [N,r,H,W].
Tensor repeat_channels(const Tensor& x, int r);

// Concatenate along dim 0 (rank 2 or rank 4) / along channels (rank 4).
Tensor concat_batch(const std::vector<Tensor>& parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Mean over rows of -sum_n q[i,n] * log softmax(logits)[i,n]; q is a plain
// target array of the same extent as logits.
Tensor softmax_xent_soft(const Tensor& logits, const Array& targets);

// Batch-hard triplet over embedding rows: hardest positive / hardest negative
// per anchor, hinge at margin, mean over anchors that have both.
Tensor batch_hard_triplet(const Tensor& v, const std::vector<int>& labels, Scalar margin);

// Batch normalization running statistics (not part of the autodiff graph).
struct BNStats {
  Array mean;
  Array var;
  void init(Eigen::Index channels) {
    mean = Array::Zero(channels);
    var = Array::Ones(channels);
  }
};

// Per-channel batch norm over N,H,W. In training mode normalizes with batch
// statistics (gradient flows through them) and updates `stats`; in eval mode
// uses the stored running statistics.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BNStats& stats,
                   bool training, Scalar momentum = 0.1, Scalar eps = 1e-5);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(Scalar s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, Scalar s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, Scalar s) { return add_scalar(a, -s); }

}  // namespace tsgan
