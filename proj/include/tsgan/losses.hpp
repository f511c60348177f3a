#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tsgan/ops.hpp"

namespace tsgan {

// All GAN objectives are written in minimized-negative form: the paper's
// maximized expectations of log D become -mean log D, so every loss here is
// a quantity to minimize and is non-negative by construction. Discriminator
// probabilities are clamped at 1e-7 before any log.
inline constexpr Scalar kProbFloor = 1e-7;

// Discriminator as a callable so losses stay independent of which
// discriminator variant (joint or image-only) the trainer wired in.
// images: [n,C,H,W]; fmaps: [n,Cf,H',W'] (ignored by image-only wrappers).
using DiscFn = std::function<Tensor(const Tensor& images, const Tensor& fmaps)>;
using GenFn = std::function<Tensor(const Tensor& images)>;

// The three fake-pair kinds of Eq. 5. The real pair (X_I, f^{X_I}) is never a
// member.
struct PairSetM {
  struct Pairs {
    Tensor images;  // IR-shaped batch
    Tensor fmaps;
  };
  Pairs fake_fake;  // (X_I', f^{X_I'})
  Pairs fake_real;  // (X_I', f^{X_I})
  Pairs real_fake;  // (X_I,  f^{X_I'})
};

// Eq. 10 soft target: entry y = 1 - ((N-1)/N) eps, others eps/N.
Array soft_labels(int n, Scalar eps, int y);

// Eq. 9: mean over the batch of -sum q log softmax(logits).
Tensor id_loss(const Tensor& logits, const std::vector<int>& labels, Scalar eps);

// Eq. 11: batch-hard triplet, anchor-mean reduction.
Tensor triplet_loss(const Tensor& vectors, const std::vector<int>& labels, Scalar margin);

// Eq. 1: -mean log D(X_I', f^{X_I'}).
Tensor gen_adv_loss(const DiscFn& d, const Tensor& fake_images, const Tensor& fake_fmaps);

// Eq. 2-5: -mean log D(real pair) - mean over M of log(1 - D(fake pair)).
// Both terms are also exposed separately for reporting.
struct DiscLossParts {
  Tensor real;
  Tensor fake;
  Tensor total;
};
DiscLossParts disc_loss(const DiscFn& d, const Tensor& real_images, const Tensor& real_fmaps,
                        const PairSetM& m);

// Image-only discriminator (the RGB-side D_R): -mean log d(real) and
// -mean log(1 - d(fake)), same clamping and reduction as disc_loss.
DiscLossParts ordinary_disc_loss(const GenFn& d, const Tensor& real_images,
                                 const Tensor& fake_images);

// Generator side of the image-only discriminator: -mean log d(fake).
Tensor ordinary_gen_adv_loss(const GenFn& d, const Tensor& fake_images);

// Eq. 6: E|G_R(G_I(X_R)) - X_R|_1 + E|G_I(G_R(X_I)) - X_I|_1 (means over
// elements, directions summed).
Tensor cycle_loss(const GenFn& g_i, const GenFn& g_r, const Tensor& x_rgb, const Tensor& x_ir);

// Eq. 7: adv + omega * cyc.
Tensor gen_total(const Tensor& adv, const Tensor& cyc, Scalar omega);

// Eq. 12: -mean over M of log D(x, f); drives backbone feature maps toward
// the discriminator's "real" side.
Tensor reid_gan_loss(const DiscFn& d, const PairSetM& m);

// Eq. 13-15: mean squared error over elements per pair; teacher maps must be
// gradient-free.
struct TsParts {
  Tensor real_ir;  // Eq. 13: mse(f_T^{X_I},  f_S^{X_I})
  Tensor fake_ir;  // Eq. 14: mse(f_T^{X_I'}, f_S^{X_I'})
  Tensor cd;       // Eq. 15: mse(f_T^{X_I'}, f_S^{X_R})
};
TsParts ts_losses(const Tensor& ft_real_ir, const Tensor& fs_real_ir, const Tensor& ft_fake_ir,
                  const Tensor& fs_fake_ir, const Tensor& fs_rgb);

// Eq. 16: alpha_c * cd + alpha_s * (real_ir + fake_ir).
Tensor ts_total(const TsParts& parts, Scalar alpha_c, Scalar alpha_s);

// Eq. 8: lambda1 * id + lambda2 * tri + lambda3 * gan.
Tensor reid_total(const Tensor& id, const Tensor& tri, const Tensor& gan, Scalar lambda1,
                  Scalar lambda2, Scalar lambda3);

// Elementwise mean squared error (shared by the TS losses and tests).
Tensor mse(const Tensor& a, const Tensor& b);

// One scalar per loss term of a training step, plus bookkeeping.
struct LossReport {
  int epoch = 0, step = 0;
  Scalar lr = 0;
  Scalar g_adv = 0, cyc = 0, g = 0;
  Scalar d_real = 0, d_fake = 0, d = 0;
  Scalar reid_id = 0, reid_tri = 0, reid_gan = 0, reid = 0;
  Scalar ts_real_ir = 0, ts_fake_ir = 0, ts_cd = 0, ts = 0;
  Scalar backbone = 0;

  bool finite() const;
  std::string line() const;                      // one key=value log line
  static LossReport parse(const std::string&);   // inverse of line()
};

}  // namespace tsgan
