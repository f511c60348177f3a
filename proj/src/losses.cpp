#include "tsgan/losses.hpp"

#include <cmath>
#include <sstream>

namespace tsgan {

namespace {

// -mean log clamp(p)
Tensor neg_mean_log(const Tensor& probs) {
  return mul_scalar(mean_all(log_(clamp_min(probs, kProbFloor))), -1.0);
}

// -mean log clamp(1 - p)
Tensor neg_mean_log_one_minus(const Tensor& probs) {
  Tensor one_minus = add_scalar(mul_scalar(probs, -1.0), 1.0);
  return mul_scalar(mean_all(log_(clamp_min(one_minus, kProbFloor))), -1.0);
}

void check_pairs(const PairSetM::Pairs& p, const char* kind) {
  TSGAN_CHECK(p.images.defined() && p.fmaps.defined(), Data,
              std::string("pair set M: ") + kind + " is empty");
  TSGAN_CHECK(p.images.shape()[0] == p.fmaps.shape()[0], Data,
              std::string("pair set M: ") + kind + " image/fmap batch mismatch");
  TSGAN_CHECK(p.images.shape()[0] > 0, Data, std::string("pair set M: ") + kind + " is empty");
}

}  // namespace

Array soft_labels(int n, Scalar eps, int y) {
  TSGAN_CHECK(n > 0, Data, "soft_labels: N must be positive");
  TSGAN_CHECK(eps >= 0.0 && eps < 1.0, Data, "soft_labels: eps must be in [0,1)");
  TSGAN_CHECK(y >= 0 && y < n, Data,
              "soft_labels: label " + std::to_string(y) + " out of range [0," +
                  std::to_string(n) + ")");
  Array q = Array::Constant(n, eps / static_cast<Scalar>(n));
  q[y] = 1.0 - (static_cast<Scalar>(n - 1) / static_cast<Scalar>(n)) * eps;
  return q;
}

Tensor id_loss(const Tensor& logits, const std::vector<int>& labels, Scalar eps) {
  TSGAN_CHECK(logits.shape().rank == 2, Data, "id_loss: logits must be [n,N]");
  const Eigen::Index n = logits.shape()[0], classes = logits.shape()[1];
  TSGAN_CHECK(static_cast<Eigen::Index>(labels.size()) == n, Data,
              "id_loss: label count does not match batch");
  Array q(n * classes);
  for (Eigen::Index i = 0; i < n; ++i)
    q.segment(i * classes, classes) =
        soft_labels(static_cast<int>(classes), eps, labels[static_cast<std::size_t>(i)]);
  return softmax_xent_soft(logits, q);
}

Tensor triplet_loss(const Tensor& vectors, const std::vector<int>& labels, Scalar margin) {
  return batch_hard_triplet(vectors, labels, margin);
}

Tensor gen_adv_loss(const DiscFn& d, const Tensor& fake_images, const Tensor& fake_fmaps) {
  TSGAN_CHECK(fake_images.defined() && fake_images.shape()[0] > 0, Data,
              "gen_adv_loss: empty batch");
  return neg_mean_log(d(fake_images, fake_fmaps));
}

DiscLossParts disc_loss(const DiscFn& d, const Tensor& real_images, const Tensor& real_fmaps,
                        const PairSetM& m) {
  TSGAN_CHECK(real_images.defined() && real_images.shape()[0] > 0, Data,
              "disc_loss: empty real batch");
  check_pairs(m.fake_fake, "(X_I', f^{X_I'})");
  check_pairs(m.fake_real, "(X_I', f^{X_I})");
  check_pairs(m.real_fake, "(X_I, f^{X_I'})");

  DiscLossParts out;
  out.real = neg_mean_log(d(real_images, real_fmaps));
  Tensor probs = concat_batch({d(m.fake_fake.images, m.fake_fake.fmaps),
                               d(m.fake_real.images, m.fake_real.fmaps),
                               d(m.real_fake.images, m.real_fake.fmaps)});
  out.fake = neg_mean_log_one_minus(probs);
  out.total = out.real + out.fake;
  return out;
}

DiscLossParts ordinary_disc_loss(const GenFn& d, const Tensor& real_images,
                                 const Tensor& fake_images) {
  TSGAN_CHECK(real_images.defined() && real_images.shape()[0] > 0, Data,
              "ordinary_disc_loss: empty real batch");
  TSGAN_CHECK(fake_images.defined() && fake_images.shape()[0] > 0, Data,
              "ordinary_disc_loss: empty fake batch");
  DiscLossParts out;
  out.real = neg_mean_log(d(real_images));
  out.fake = neg_mean_log_one_minus(d(fake_images));
  out.total = out.real + out.fake;
  return out;
}

Tensor ordinary_gen_adv_loss(const GenFn& d, const Tensor& fake_images) {
  TSGAN_CHECK(fake_images.defined() && fake_images.shape()[0] > 0, Data,
              "ordinary_gen_adv_loss: empty batch");
  return neg_mean_log(d(fake_images));
}

Tensor cycle_loss(const GenFn& g_i, const GenFn& g_r, const Tensor& x_rgb, const Tensor& x_ir) {
  Tensor rgb_term = mean_all(abs_(g_r(g_i(x_rgb)) - x_rgb));
  Tensor ir_term = mean_all(abs_(g_i(g_r(x_ir)) - x_ir));
  return rgb_term + ir_term;
}

Tensor gen_total(const Tensor& adv, const Tensor& cyc, Scalar omega) {
  return adv + omega * cyc;
}

Tensor reid_gan_loss(const DiscFn& d, const PairSetM& m) {
  check_pairs(m.fake_fake, "(X_I', f^{X_I'})");
  check_pairs(m.fake_real, "(X_I', f^{X_I})");
  check_pairs(m.real_fake, "(X_I, f^{X_I'})");
  Tensor probs = concat_batch({d(m.fake_fake.images, m.fake_fake.fmaps),
                               d(m.fake_real.images, m.fake_real.fmaps),
                               d(m.real_fake.images, m.real_fake.fmaps)});
  return neg_mean_log(probs);
}

Tensor mse(const Tensor& a, const Tensor& b) {
  TSGAN_CHECK(a.shape() == b.shape(), Data,
              "mse: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  return mean_all(square(a - b));
}

TsParts ts_losses(const Tensor& ft_real_ir, const Tensor& fs_real_ir, const Tensor& ft_fake_ir,
                  const Tensor& fs_fake_ir, const Tensor& fs_rgb) {
  TSGAN_CHECK(!ft_real_ir.requires_grad() && !ft_fake_ir.requires_grad(), Data,
              "ts_losses: teacher maps must be gradient-free");
  TsParts out;
  out.real_ir = mse(ft_real_ir, fs_real_ir);
  out.fake_ir = mse(ft_fake_ir, fs_fake_ir);
  out.cd = mse(ft_fake_ir, fs_rgb);
  return out;
}

Tensor ts_total(const TsParts& parts, Scalar alpha_c, Scalar alpha_s) {
  return alpha_c * parts.cd + alpha_s * (parts.real_ir + parts.fake_ir);
}

Tensor reid_total(const Tensor& id, const Tensor& tri, const Tensor& gan, Scalar lambda1,
                  Scalar lambda2, Scalar lambda3) {
  return lambda1 * id + lambda2 * tri + lambda3 * gan;
}

// ---------------------------------------------------------------------------
// LossReport
// ---------------------------------------------------------------------------

namespace {

struct Field {
  const char* key;
  Scalar LossReport::* member;
};

constexpr Field kFields[] = {
    {"lr", &LossReport::lr},
    {"g_adv", &LossReport::g_adv},
    {"cyc", &LossReport::cyc},
    {"g", &LossReport::g},
    {"d_real", &LossReport::d_real},
    {"d_fake", &LossReport::d_fake},
    {"d", &LossReport::d},
    {"reid_id", &LossReport::reid_id},
    {"reid_tri", &LossReport::reid_tri},
    {"reid_gan", &LossReport::reid_gan},
    {"reid", &LossReport::reid},
    {"ts_real_ir", &LossReport::ts_real_ir},
    {"ts_fake_ir", &LossReport::ts_fake_ir},
    {"ts_cd", &LossReport::ts_cd},
    {"ts", &LossReport::ts},
    {"backbone", &LossReport::backbone},
};

}  // namespace

bool LossReport::finite() const {
  for (const auto& f : kFields)
    if (!std::isfinite(this->*(f.member))) return false;
  return true;
}

std::string LossReport::line() const {
  std::ostringstream o;
  o.precision(17);
  o << "epoch=" << epoch << " step=" << step;
  for (const auto& f : kFields) o << " " << f.key << "=" << this->*(f.member);
  return o.str();
}

LossReport LossReport::parse(const std::string& s) {
  LossReport r;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    auto eq = tok.find('=');
    TSGAN_CHECK(eq != std::string::npos, Data, "LossReport::parse: bad token " + tok);
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "epoch") {
      r.epoch = std::stoi(val);
      continue;
    }
    if (key == "step") {
      r.step = std::stoi(val);
      continue;
    }
    bool known = false;
    for (const auto& f : kFields)
      if (key == f.key) {
        r.*(f.member) = std::stod(val);
        known = true;
        break;
      }
    TSGAN_CHECK(known, Data, "LossReport::parse: unknown key " + key);
  }
  return r;
}

}  // namespace tsgan
