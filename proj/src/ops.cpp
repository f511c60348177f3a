#include "tsgan/ops.hpp"

#include <algorithm>
#include <cmath>

namespace tsgan {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<detail::TensorNode>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  TSGAN_CHECK(a.shape() == b.shape(), Data,
              std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

// Unary op plumbing: dval is the elementwise derivative evaluated eagerly.
Tensor unary(const Tensor& a, Array value, Array dval) {
  NodePtr pa = a.node();
  return Tensor::make_op(a.shape(), std::move(value), {pa},
                         [pa, d = std::move(dval)](TensorNode& self) {
                           if (pa->requires_grad) pa->accumulate(self.grad * d);
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  NodePtr pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), a.value() + b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  NodePtr pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), a.value() - b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  NodePtr pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), a.value() * b.value(), {pa, pb}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(self.grad * pa->value);
  });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  NodePtr pa = a.node();
  return Tensor::make_op(a.shape(), a.value() + s, {pa}, [pa](TensorNode& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
  });
}

Tensor mul_scalar(const Tensor& a, Scalar s) {
  NodePtr pa = a.node();
  return Tensor::make_op(a.shape(), a.value() * s, {pa}, [pa, s](TensorNode& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * s);
  });
}

Tensor square(const Tensor& a) { return unary(a, a.value().square(), 2.0 * a.value()); }

Tensor abs_(const Tensor& a) { return unary(a, a.value().abs(), a.value().sign()); }

Tensor log_(const Tensor& a) { return unary(a, a.value().log(), a.value().inverse()); }

Tensor clamp_min(const Tensor& a, Scalar lo) {
  return unary(a, a.value().max(lo), (a.value() > lo).cast<Scalar>());
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  return unary(a, a.value().max(lo).min(hi),
               (a.value() >= lo && a.value() <= hi).cast<Scalar>());
}

Tensor relu(const Tensor& a) {
  return unary(a, a.value().max(0.0), (a.value() > 0.0).cast<Scalar>());
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  Array pos = (a.value() > 0.0).cast<Scalar>();
  return unary(a, a.value().max(slope * a.value()), pos + slope * (1.0 - pos));
}

Tensor sigmoid(const Tensor& a) {
  Array y(a.size());
  const Array& x = a.value();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Scalar v = x[i];
    y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Array d = y * (1.0 - y);
  return unary(a, std::move(y), std::move(d));
}

Tensor tanh_(const Tensor& a) {
  Array y = a.value().tanh();
  Array d = 1.0 - y.square();
  return unary(a, std::move(y), std::move(d));
}

Tensor sum_all(const Tensor& a) {
  NodePtr pa = a.node();
  return Tensor::make_op(Shape::scalar(), Array::Constant(1, a.value().sum()), {pa},
                         [pa](TensorNode& self) {
                           if (pa->requires_grad)
                             pa->accumulate(Array::Constant(pa->value.size(), self.grad[0]));
                         });
}

Tensor mean_all(const Tensor& a) {
  NodePtr pa = a.node();
  Scalar inv = 1.0 / static_cast<Scalar>(a.size());
  return Tensor::make_op(Shape::scalar(), Array::Constant(1, a.value().mean()), {pa},
                         [pa, inv](TensorNode& self) {
                           if (pa->requires_grad)
                             pa->accumulate(Array::Constant(pa->value.size(), self.grad[0] * inv));
                         });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  TSGAN_CHECK(a.shape().rank == 2 && b.shape().rank == 2 && a.shape()[1] == b.shape()[0], Data,
              "matmul: incompatible shapes " + a.shape().str() + " x " + b.shape().str());
  Eigen::Index n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  MapConstMat A(a.value().data(), n, k), B(b.value().data(), k, m);
  Array out(n * m);
  MapMat(out.data(), n, m) = A * B;
  NodePtr pa = a.node(), pb = b.node();
  return Tensor::make_op(Shape{n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](TensorNode& self) {
    MapConstMat G(self.grad.data(), n, m);
    MapConstMat A(pa->value.data(), n, k), B(pb->value.data(), k, m);
    if (pa->requires_grad) {
      Array da(n * k);
      MapMat(da.data(), n, k) = G * B.transpose();
      pa->accumulate(da);
    }
    if (pb->requires_grad) {
      Array db(k * m);
      MapMat(db.data(), k, m) = A.transpose() * G;
      pb->accumulate(db);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  TSGAN_CHECK(x.shape().rank == 2 && w.shape().rank == 2 && b.shape().rank == 1, Data,
              "linear: bad ranks");
  Eigen::Index n = x.shape()[0], d = x.shape()[1], m = w.shape()[1];
  TSGAN_CHECK(w.shape()[0] == d && b.shape()[0] == m, Data, "linear: shape mismatch");
  MapConstMat X(x.value().data(), n, d), W(w.value().data(), d, m);
  Array out(n * m);
  MapMat O(out.data(), n, m);
  O = X * W;
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), m);
  NodePtr px = x.node(), pw = w.node(), pb = b.node();
  return Tensor::make_op(Shape{n, m}, std::move(out), {px, pw, pb},
                         [px, pw, pb, n, d, m](TensorNode& self) {
                           MapConstMat G(self.grad.data(), n, m);
                           MapConstMat X(px->value.data(), n, d), W(pw->value.data(), d, m);
                           if (px->requires_grad) {
                             Array dx(n * d);
                             MapMat(dx.data(), n, d) = G * W.transpose();
                             px->accumulate(dx);
                           }
                           if (pw->requires_grad) {
                             Array dw(d * m);
                             MapMat(dw.data(), d, m) = X.transpose() * G;
                             pw->accumulate(dw);
                           }
                           if (pb->requires_grad) {
                             Array db(m);
                             Eigen::Map<Eigen::RowVectorXd>(db.data(), m) = G.colwise().sum();
                             pb->accumulate(db);
                           }
                         });
}

namespace {

struct ConvDims {
  Eigen::Index n, c, h, w;    // input
  Eigen::Index f, kh, kw;     // filters
  Eigen::Index oh, ow;        // output
  int stride, pad;
};

void im2col(const Scalar* x, const ConvDims& dd, Eigen::Index sample, MatrixRM& cols) {
  const Scalar* xs = x + sample * dd.c * dd.h * dd.w;
  for (Eigen::Index c = 0; c < dd.c; ++c)
    for (Eigen::Index ky = 0; ky < dd.kh; ++ky)
      for (Eigen::Index kx = 0; kx < dd.kw; ++kx) {
        Eigen::Index row = (c * dd.kh + ky) * dd.kw + kx;
        for (Eigen::Index oy = 0; oy < dd.oh; ++oy) {
          Eigen::Index iy = oy * dd.stride - dd.pad + ky;
          for (Eigen::Index ox = 0; ox < dd.ow; ++ox) {
            Eigen::Index ix = ox * dd.stride - dd.pad + kx;
            Scalar v = 0.0;
            if (iy >= 0 && iy < dd.h && ix >= 0 && ix < dd.w) v = xs[(c * dd.h + iy) * dd.w + ix];
            cols(row, oy * dd.ow + ox) = v;
          }
        }
      }
}

void col2im_add(Scalar* dx, const ConvDims& dd, Eigen::Index sample, const MatrixRM& cols) {
  Scalar* xs = dx + sample * dd.c * dd.h * dd.w;
  for (Eigen::Index c = 0; c < dd.c; ++c)
    for (Eigen::Index ky = 0; ky < dd.kh; ++ky)
      for (Eigen::Index kx = 0; kx < dd.kw; ++kx) {
        Eigen::Index row = (c * dd.kh + ky) * dd.kw + kx;
        for (Eigen::Index oy = 0; oy < dd.oh; ++oy) {
          Eigen::Index iy = oy * dd.stride - dd.pad + ky;
          if (iy < 0 || iy >= dd.h) continue;
          for (Eigen::Index ox = 0; ox < dd.ow; ++ox) {
            Eigen::Index ix = ox * dd.stride - dd.pad + kx;
            if (ix < 0 || ix >= dd.w) continue;
            xs[(c * dd.h + iy) * dd.w + ix] += cols(row, oy * dd.ow + ox);
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  TSGAN_CHECK(x.shape().rank == 4 && w.shape().rank == 4 && b.shape().rank == 1, Data,
              "conv2d: bad ranks");
  ConvDims dd;
  dd.n = x.shape()[0];
  dd.c = x.shape()[1];
  dd.h = x.shape()[2];
  dd.w = x.shape()[3];
  dd.f = w.shape()[0];
  dd.kh = w.shape()[2];
  dd.kw = w.shape()[3];
  dd.stride = stride;
  dd.pad = pad;
  TSGAN_CHECK(w.shape()[1] == dd.c, Data,
              "conv2d: input channels " + std::to_string(dd.c) + " != filter channels " +
                  std::to_string(w.shape()[1]));
  TSGAN_CHECK(b.shape()[0] == dd.f, Data, "conv2d: bias size mismatch");
  dd.oh = (dd.h + 2 * pad - dd.kh) / stride + 1;
  dd.ow = (dd.w + 2 * pad - dd.kw) / stride + 1;
  TSGAN_CHECK(dd.oh > 0 && dd.ow > 0, Data, "conv2d: kernel larger than padded input");

  const Eigen::Index K = dd.c * dd.kh * dd.kw;
  const Eigen::Index L = dd.oh * dd.ow;
  MapConstMat W(w.value().data(), dd.f, K);
  Array out(dd.n * dd.f * L);
  MatrixRM cols(K, L);
  for (Eigen::Index s = 0; s < dd.n; ++s) {
    im2col(x.value().data(), dd, s, cols);
    MapMat O(out.data() + s * dd.f * L, dd.f, L);
    O = W * cols;
    O.colwise() += Eigen::Map<const Eigen::VectorXd>(b.value().data(), dd.f);
  }

  NodePtr px = x.node(), pw = w.node(), pb = b.node();
  return Tensor::make_op(
      Shape{dd.n, dd.f, dd.oh, dd.ow}, std::move(out), {px, pw, pb},
      [px, pw, pb, dd, K, L](TensorNode& self) {
        MapConstMat W(pw->value.data(), dd.f, K);
        MatrixRM cols(K, L);
        bool need_x = px->requires_grad, need_w = pw->requires_grad, need_b = pb->requires_grad;
        Array dx, dw, db;
        if (need_x) dx = Array::Zero(px->value.size());
        if (need_w) dw = Array::Zero(pw->value.size());
        if (need_b) db = Array::Zero(pb->value.size());
        for (Eigen::Index s = 0; s < dd.n; ++s) {
          MapConstMat G(self.grad.data() + s * dd.f * L, dd.f, L);
          if (need_w) {
            im2col(px->value.data(), dd, s, cols);
            MapMat(dw.data(), dd.f, K).noalias() += G * cols.transpose();
          }
          if (need_b) Eigen::Map<Eigen::VectorXd>(db.data(), dd.f) += G.rowwise().sum();
          if (need_x) {
            MatrixRM dcols = W.transpose() * G;
            col2im_add(dx.data(), dd, s, dcols);
          }
        }
        if (need_x) px->accumulate(dx);
        if (need_w) pw->accumulate(dw);
        if (need_b) pb->accumulate(db);
      });
}

Tensor upsample2(const Tensor& x) {
  TSGAN_CHECK(x.shape().rank == 4, Data, "upsample2: rank-4 input required");
  Eigen::Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Array out(n * c * 4 * h * w);
  const Scalar* xv = x.value().data();
  for (Eigen::Index nc = 0; nc < n * c; ++nc) {
    const Scalar* src = xv + nc * h * w;
    Scalar* dst = out.data() + nc * 4 * h * w;
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index xx = 0; xx < w; ++xx) {
        Scalar v = src[y * w + xx];
        Scalar* d0 = dst + (2 * y) * 2 * w + 2 * xx;
        Scalar* d1 = dst + (2 * y + 1) * 2 * w + 2 * xx;
        d0[0] = d0[1] = d1[0] = d1[1] = v;
      }
  }
  NodePtr px = x.node();
  return Tensor::make_op(Shape{n, c, 2 * h, 2 * w}, std::move(out), {px},
                         [px, n, c, h, w](TensorNode& self) {
                           if (!px->requires_grad) return;
                           Array dx(n * c * h * w);
                           const Scalar* g = self.grad.data();
                           for (Eigen::Index nc = 0; nc < n * c; ++nc) {
                             const Scalar* gs = g + nc * 4 * h * w;
                             Scalar* ds = dx.data() + nc * h * w;
                             for (Eigen::Index y = 0; y < h; ++y)
                               for (Eigen::Index xx = 0; xx < w; ++xx) {
                                 const Scalar* g0 = gs + (2 * y) * 2 * w + 2 * xx;
                                 const Scalar* g1 = gs + (2 * y + 1) * 2 * w + 2 * xx;
                                 ds[y * w + xx] = g0[0] + g0[1] + g1[0] + g1[1];
                               }
                           }
                           px->accumulate(dx);
                         });
}

Tensor gap2d(const Tensor& x) {
  TSGAN_CHECK(x.shape().rank == 4, Data, "gap2d: rank-4 input required");
  Eigen::Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Array out(n * c);
  for (Eigen::Index i = 0; i < n * c; ++i)
    out[i] = x.value().segment(i * hw, hw).mean();
  NodePtr px = x.node();
  return Tensor::make_op(Shape{n, c}, std::move(out), {px}, [px, n, c, hw](TensorNode& self) {
    if (!px->requires_grad) return;
    Array dx(n * c * hw);
    Scalar inv = 1.0 / static_cast<Scalar>(hw);
    for (Eigen::Index i = 0; i < n * c; ++i)
      dx.segment(i * hw, hw) = Array::Constant(hw, self.grad[i] * inv);
    px->accumulate(dx);
  });
}

Tensor repeat_channels(const Tensor& x, int r) {
  TSGAN_CHECK(x.shape().rank == 4 && x.shape()[1] == 1, Data,
              "repeat_channels: single-channel rank-4 input required");
  Eigen::Index n = x.shape()[0], hw = x.shape()[2] * x.shape()[3];
  Array out(n * r * hw);
  for (Eigen::Index s = 0; s < n; ++s)
    for (int k = 0; k < r; ++k)
      out.segment((s * r + k) * hw, hw) = x.value().segment(s * hw, hw);
  NodePtr px = x.node();
  return Tensor::make_op(Shape{n, r, x.shape()[2], x.shape()[3]}, std::move(out), {px},
                         [px, n, r, hw](TensorNode& self) {
                           if (!px->requires_grad) return;
                           Array dx = Array::Zero(n * hw);
                           for (Eigen::Index s = 0; s < n; ++s)
                             for (int k = 0; k < r; ++k)
                               dx.segment(s * hw, hw) += self.grad.segment((s * r + k) * hw, hw);
                           px->accumulate(dx);
                         });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  TSGAN_CHECK(!parts.empty(), Data, "concat_batch: no parts");
  Shape s0 = parts[0].shape();
  TSGAN_CHECK(s0.rank >= 2, Data, "concat_batch: rank >= 2 required");
  Eigen::Index total = 0, per = s0.count() / s0[0];
  for (const auto& p : parts) {
    TSGAN_CHECK(p.shape().rank == s0.rank, Data, "concat_batch: rank mismatch");
    for (int i = 1; i < s0.rank; ++i)
      TSGAN_CHECK(p.shape()[i] == s0[i], Data, "concat_batch: trailing dim mismatch");
    total += p.shape()[0];
  }
  Array out(total * per);
  Eigen::Index off = 0;
  std::vector<NodePtr> nodes;
  std::vector<Eigen::Index> sizes;
  for (const auto& p : parts) {
    out.segment(off, p.size()) = p.value();
    off += p.size();
    nodes.push_back(p.node());
    sizes.push_back(p.size());
  }
  Shape shape = s0;
  shape.d[0] = total;
  return Tensor::make_op(shape, std::move(out), nodes, [nodes, sizes](TensorNode& self) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i]->requires_grad) nodes[i]->accumulate(self.grad.segment(off, sizes[i]));
      off += sizes[i];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  TSGAN_CHECK(a.shape().rank == 4 && b.shape().rank == 4, Data, "concat_channels: rank-4 required");
  Eigen::Index n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  Eigen::Index h = a.shape()[2], w = a.shape()[3], hw = h * w;
  TSGAN_CHECK(b.shape()[0] == n && b.shape()[2] == h && b.shape()[3] == w, Data,
              "concat_channels: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Array out(n * (ca + cb) * hw);
  for (Eigen::Index s = 0; s < n; ++s) {
    out.segment(s * (ca + cb) * hw, ca * hw) = a.value().segment(s * ca * hw, ca * hw);
    out.segment(s * (ca + cb) * hw + ca * hw, cb * hw) = b.value().segment(s * cb * hw, cb * hw);
  }
  NodePtr pa = a.node(), pb = b.node();
  return Tensor::make_op(Shape{n, ca + cb, h, w}, std::move(out), {pa, pb},
                         [pa, pb, n, ca, cb, hw](TensorNode& self) {
                           if (pa->requires_grad) {
                             Array da(n * ca * hw);
                             for (Eigen::Index s = 0; s < n; ++s)
                               da.segment(s * ca * hw, ca * hw) =
                                   self.grad.segment(s * (ca + cb) * hw, ca * hw);
                             pa->accumulate(da);
                           }
                           if (pb->requires_grad) {
                             Array db(n * cb * hw);
                             for (Eigen::Index s = 0; s < n; ++s)
                               db.segment(s * cb * hw, cb * hw) =
                                   self.grad.segment(s * (ca + cb) * hw + ca * hw, cb * hw);
                             pb->accumulate(db);
                           }
                         });
}

Tensor softmax_xent_soft(const Tensor& logits, const Array& targets) {
  TSGAN_CHECK(logits.shape().rank == 2, Data, "softmax_xent_soft: rank-2 logits required");
  TSGAN_CHECK(logits.size() == targets.size(), Data, "softmax_xent_soft: target size mismatch");
  TSGAN_CHECK(logits.value().isFinite().all(), Numeric, "softmax_xent_soft: non-finite logits");
  Eigen::Index n = logits.shape()[0], m = logits.shape()[1];
  Array probs(n * m);
  Scalar loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto z = logits.value().segment(i * m, m);
    Scalar zmax = z.maxCoeff();
    Array e = (z - zmax).exp();
    Scalar sum = e.sum();
    probs.segment(i * m, m) = e / sum;
    Scalar lse = std::log(sum) + zmax;
    auto q = targets.segment(i * m, m);
    loss += -(q * (z - lse)).sum();
  }
  loss /= static_cast<Scalar>(n);
  NodePtr pl = logits.node();
  return Tensor::make_op(Shape::scalar(), Array::Constant(1, loss), {pl},
                         [pl, probs = std::move(probs), targets, n, m](TensorNode& self) {
                           if (!pl->requires_grad) return;
                           Array dz(n * m);
                           Scalar g = self.grad[0] / static_cast<Scalar>(n);
                           for (Eigen::Index i = 0; i < n; ++i) {
                             Scalar qsum = targets.segment(i * m, m).sum();
                             dz.segment(i * m, m) =
                                 g * (qsum * probs.segment(i * m, m) - targets.segment(i * m, m));
                           }
                           pl->accumulate(dz);
                         });
}

Tensor batch_hard_triplet(const Tensor& v, const std::vector<int>& labels, Scalar margin) {
  TSGAN_CHECK(v.shape().rank == 2, Data, "batch_hard_triplet: rank-2 embeddings required");
  Eigen::Index bsz = v.shape()[0], d = v.shape()[1];
  TSGAN_CHECK(static_cast<Eigen::Index>(labels.size()) == bsz, Data,
              "batch_hard_triplet: label count mismatch");
  bool multi_id = false;
  for (std::size_t i = 1; i < labels.size(); ++i) multi_id = multi_id || labels[i] != labels[0];
  TSGAN_CHECK(multi_id, Data, "batch_hard_triplet: batch holds a single identity");

  MapConstMat V(v.value().data(), bsz, d);
  MatrixRM dist(bsz, bsz);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < bsz; ++j) {
      Scalar dd = (V.row(i) - V.row(j)).norm();
      dist(i, j) = dd;
      dist(j, i) = dd;
    }
  }

  struct Pick {
    Eigen::Index anchor, pos, neg;
    bool active;  // hinge engaged
  };
  std::vector<Pick> picks;
  Scalar loss = 0.0;
  for (Eigen::Index a = 0; a < bsz; ++a) {
    Eigen::Index hp = -1, hn = -1;
    for (Eigen::Index j = 0; j < bsz; ++j) {
      if (j == a) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)]) {
        if (hp < 0 || dist(a, j) > dist(a, hp)) hp = j;
      } else {
        if (hn < 0 || dist(a, j) < dist(a, hn)) hn = j;
      }
    }
    if (hp < 0 || hn < 0) continue;  // anchor without a usable pair
    Scalar term = margin + dist(a, hp) - dist(a, hn);
    picks.push_back({a, hp, hn, term > 0.0});
    loss += std::max(0.0, term);
  }
  TSGAN_CHECK(!picks.empty(), Data, "batch_hard_triplet: no anchor has both pair kinds");
  Scalar inv = 1.0 / static_cast<Scalar>(picks.size());
  loss *= inv;

  NodePtr pv = v.node();
  return Tensor::make_op(
      Shape::scalar(), Array::Constant(1, loss), {pv},
      [pv, picks = std::move(picks), dist = std::move(dist), bsz, d, inv](TensorNode& self) {
        if (!pv->requires_grad) return;
        Array dvx = Array::Zero(bsz * d);
        MapMat DV(dvx.data(), bsz, d);
        MapConstMat V(pv->value.data(), bsz, d);
        Scalar g = self.grad[0] * inv;
        for (const auto& p : picks) {
          if (!p.active) continue;
          if (dist(p.anchor, p.pos) > 0.0) {
            Eigen::RowVectorXd dir = (V.row(p.anchor) - V.row(p.pos)) / dist(p.anchor, p.pos);
            DV.row(p.anchor) += g * dir;
            DV.row(p.pos) -= g * dir;
          }
          if (dist(p.anchor, p.neg) > 0.0) {
            Eigen::RowVectorXd dir = (V.row(p.anchor) - V.row(p.neg)) / dist(p.anchor, p.neg);
            DV.row(p.anchor) -= g * dir;
            DV.row(p.neg) += g * dir;
          }
        }
        pv->accumulate(dvx);
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BNStats& stats,
                   bool training, Scalar momentum, Scalar eps) {
  TSGAN_CHECK(x.shape().rank == 4, Data, "batchnorm2d: rank-4 input required");
  Eigen::Index n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  TSGAN_CHECK(gamma.shape().rank == 1 && gamma.shape()[0] == c && beta.shape()[0] == c, Data,
              "batchnorm2d: parameter size mismatch");
  TSGAN_CHECK(stats.mean.size() == c, Data, "batchnorm2d: stats not initialized");

  Array mean(c), var(c);
  if (training) {
    Scalar cnt = static_cast<Scalar>(n * hw);
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      Scalar s = 0.0, s2 = 0.0;
      for (Eigen::Index s_i = 0; s_i < n; ++s_i) {
        auto seg = x.value().segment((s_i * c + ch) * hw, hw);
        s += seg.sum();
        s2 += seg.square().sum();
      }
      mean[ch] = s / cnt;
      var[ch] = s2 / cnt - mean[ch] * mean[ch];
      if (var[ch] < 0.0) var[ch] = 0.0;  // guard fp cancellation
    }
    stats.mean = (1.0 - momentum) * stats.mean + momentum * mean;
    stats.var = (1.0 - momentum) * stats.var + momentum * var;
  } else {
    mean = stats.mean;
    var = stats.var;
  }

  Array inv_std = (var + eps).sqrt().inverse();
  Array xhat(x.size()), out(x.size());
  for (Eigen::Index s_i = 0; s_i < n; ++s_i)
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      Eigen::Index off = (s_i * c + ch) * hw;
      xhat.segment(off, hw) = (x.value().segment(off, hw) - mean[ch]) * inv_std[ch];
      out.segment(off, hw) = gamma.value()[ch] * xhat.segment(off, hw) + beta.value()[ch];
    }

  NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
  return Tensor::make_op(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw,
       training](TensorNode& self) {
        Scalar cnt = static_cast<Scalar>(n * hw);
        Array dgamma = Array::Zero(c), dbeta = Array::Zero(c);
        for (Eigen::Index s_i = 0; s_i < n; ++s_i)
          for (Eigen::Index ch = 0; ch < c; ++ch) {
            Eigen::Index off = (s_i * c + ch) * hw;
            dgamma[ch] += (self.grad.segment(off, hw) * xhat.segment(off, hw)).sum();
            dbeta[ch] += self.grad.segment(off, hw).sum();
          }
        if (pg->requires_grad) pg->accumulate(dgamma);
        if (pb->requires_grad) pb->accumulate(dbeta);
        if (px->requires_grad) {
          Array dx(px->value.size());
          for (Eigen::Index ch = 0; ch < c; ++ch) {
            Scalar k = pg->value[ch] * inv_std[ch];
            if (training) {
              Scalar mean_g = dbeta[ch] / cnt;
              Scalar mean_gx = dgamma[ch] / cnt;
              for (Eigen::Index s_i = 0; s_i < n; ++s_i) {
                Eigen::Index off = (s_i * c + ch) * hw;
                dx.segment(off, hw) =
                    k * (self.grad.segment(off, hw) - mean_g - xhat.segment(off, hw) * mean_gx);
              }
            } else {
              for (Eigen::Index s_i = 0; s_i < n; ++s_i) {
                Eigen::Index off = (s_i * c + ch) * hw;
                dx.segment(off, hw) = k * self.grad.segment(off, hw);
              }
            }
          }
          px->accumulate(dx);
        }
      });
}

}  // namespace tsgan
