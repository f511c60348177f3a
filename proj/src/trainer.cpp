#include "tsgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tsgan {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

Scalar lr_at(const TrainConfig& cfg, int epoch) {
  TSGAN_CHECK(epoch >= 0 && epoch < cfg.epochs, Config,
              "lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                  std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr * static_cast<Scalar>(epoch + 1) / static_cast<Scalar>(cfg.warmup_epochs);
  int decays = 0;
  for (int e : cfg.decay_epochs)
    if (e <= epoch) ++decays;
  return cfg.base_lr * std::pow(cfg.decay_factor, decays);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(ParamList params, Scalar lr, Scalar weight_decay, Scalar beta1, Scalar beta2,
           Scalar eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Array::Zero(p.tensor.size()));
    v_.push_back(Array::Zero(p.tensor.size()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

bool Adam::any_grad() const {
  for (const auto& p : params_)
    if (p.tensor.has_grad()) return true;
  return false;
}

void Adam::step(Scalar grad_clip) {
  if (!any_grad()) return;  // nothing flowed here this phase
  if (grad_clip > 0.0) {
    Scalar sq = 0.0;
    for (auto& p : params_)
      if (p.tensor.has_grad()) sq += p.tensor.node()->grad.square().sum();
    const Scalar norm = std::sqrt(sq);
    if (norm > grad_clip) {
      const Scalar scale = grad_clip / norm;
      for (auto& p : params_)
        if (p.tensor.has_grad()) p.tensor.node()->grad *= scale;
    }
  }
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;  // untouched this step: keep it bit-identical
    const Array& g = t.node()->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    const Array mhat = m_[i] / bc1;
    const Array vhat = v_[i] / bc2;
    t.value() -= lr_ * (mhat / (vhat.sqrt() + eps_) + weight_decay_ * t.value());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint archive: "TSGN" magic, u32 container version, u64 manifest
// length, JSON manifest, then the named arrays as raw little-endian doubles
// in manifest order. Byte-stable: the manifest is a sorted-key JSON dump and
// payload order follows it.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'G', 'N'};
constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  const Array* data;
};

// Architecture fingerprint: every config field that shapes a parameter
// array. Seeds and loss weights deliberately excluded so a checkpoint loads
// under a different seed or eval setup.
std::string arch_fingerprint(const TrainConfig& cfg, int n_classes) {
  std::ostringstream o;
  o << "widths=";
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) o << (i ? "," : "") << cfg.widths[i];
  o << ";blocks=" << cfg.blocks_per_stage << ";embed=" << cfg.embedding_dim
    << ";gen_base=" << cfg.gen_base_width << ";gen_res=" << cfg.gen_res_blocks
    << ";disc_base=" << cfg.disc_base_width << ";input=" << cfg.input_h << "x" << cfg.input_w
    << ";gan=" << to_string(cfg.gan_mode) << ";classes=" << n_classes;
  return o.str();
}

void write_archive(const std::string& path, json manifest,
                   const std::vector<ArchiveEntry>& entries) {
  json arrays = json::array();
  std::int64_t offset = 0;
  for (const auto& e : entries) {
    arrays.push_back({{"name", e.name}, {"offset", offset}, {"count", e.data->size()}});
    offset += e.data->size();
  }
  manifest["arrays"] = arrays;
  manifest["container_version"] = kArchiveVersion;
  const std::string m = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  TSGAN_CHECK(out.good(), Io, "cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  const std::uint32_t ver = kArchiveVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  const std::uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& e : entries)
    out.write(reinterpret_cast<const char*>(e.data->data()),
              static_cast<std::streamsize>(e.data->size() * sizeof(Scalar)));
  out.flush();
  TSGAN_CHECK(out.good(), Io, "checkpoint write failed: " + path);
}

struct Archive {
  json manifest;
  std::vector<Array> payload;  // aligned with manifest["arrays"]
};

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TSGAN_CHECK(in.good(), Io, "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  TSGAN_CHECK(in.good() && std::memcmp(magic, kMagic, 4) == 0, Data,
              "not a checkpoint archive: " + path);
  std::uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof ver);
  TSGAN_CHECK(in.good() && ver == kArchiveVersion, Data,
              "unsupported checkpoint version " + std::to_string(ver) + " in " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  TSGAN_CHECK(in.good(), Data, "truncated checkpoint header: " + path);
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  TSGAN_CHECK(in.good(), Data, "truncated checkpoint manifest: " + path);

  Archive a;
  try {
    a.manifest = json::parse(m);
  } catch (const std::exception& e) {
    throw data_error("bad checkpoint manifest in " + path + ": " + e.what());
  }
  for (const auto& entry : a.manifest.at("arrays")) {
    const auto count = entry.at("count").get<std::int64_t>();
    Array arr(count);
    in.read(reinterpret_cast<char*>(arr.data()),
            static_cast<std::streamsize>(count * static_cast<std::int64_t>(sizeof(Scalar))));
    TSGAN_CHECK(in.good(), Data,
                "truncated checkpoint payload at array '" +
                    entry.at("name").get<std::string>() + "': " + path);
    a.payload.push_back(std::move(arr));
  }
  return a;
}

void append(ParamList& dst, ParamList src) {
  for (auto& p : src) dst.push_back(std::move(p));
}

// Every mutable array of a model group under stable names.
struct StateIndex {
  std::vector<std::pair<std::string, Array*>> slots;

  void add_params(ParamList ps) {
    for (auto& p : ps) slots.emplace_back(p.name, &p.tensor.node()->value);
  }
  void add_buffers(BufferList bs) {
    for (auto& b : bs) slots.emplace_back(b.name, b.array);
  }
  void add_optimizer(const std::string& tag, Adam& opt) {
    const auto& ps = opt.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      slots.emplace_back(tag + ".m." + ps[i].name, &opt.moment1(i));
      slots.emplace_back(tag + ".v." + ps[i].name, &opt.moment2(i));
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Trainer construction
// ---------------------------------------------------------------------------

namespace {

StudentBackbone make_student(const TrainConfig& cfg, int n_classes) {
  Rng rng(derive_seed(cfg.seed, "init_student"));
  return StudentBackbone(cfg, n_classes, rng);
}

Generator make_gen(GenDirection dir, const TrainConfig& cfg, const char* tag) {
  Rng rng(derive_seed(cfg.seed, tag));
  return Generator(dir, cfg, rng);
}

std::optional<JointDiscriminator> make_d_joint(const TrainConfig& cfg) {
  if (cfg.gan_mode != GanMode::Joint) return std::nullopt;
  Rng rng(derive_seed(cfg.seed, "init_d_i"));
  return JointDiscriminator(cfg, cfg.widths[2], rng);
}

std::optional<OrdinaryDiscriminator> make_d_ord(const TrainConfig& cfg) {
  if (cfg.gan_mode != GanMode::Ordinary) return std::nullopt;
  Rng rng(derive_seed(cfg.seed, "init_d_i"));
  return OrdinaryDiscriminator(1, cfg, rng);
}

std::optional<OrdinaryDiscriminator> make_d_rgb(const TrainConfig& cfg) {
  if (cfg.gan_mode == GanMode::None) return std::nullopt;
  Rng rng(derive_seed(cfg.seed, "init_d_r"));
  return OrdinaryDiscriminator(3, cfg, rng);
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, int n_classes)
    : cfg_(cfg),
      n_classes_(n_classes),
      student_(make_student(cfg, n_classes)),
      teacher_(cfg),
      g_i_(make_gen(GenDirection::RgbToIr, cfg, "init_g_i")),
      g_r_(make_gen(GenDirection::IrToRgb, cfg, "init_g_r")),
      d_joint_(make_d_joint(cfg)),
      d_ord_(make_d_ord(cfg)),
      d_rgb_(make_d_rgb(cfg)),
      opt_g_(
          [&] {
            ParamList ps;
            if (cfg.gan_mode != GanMode::None) {
              append(ps, g_i_.params("g_i"));
              append(ps, g_r_.params("g_r"));
            }
            return ps;
          }(),
          cfg.base_lr, cfg.weight_decay),
      opt_b_(student_.params("student"), cfg.base_lr, cfg.weight_decay),
      opt_d_(
          [&] {
            ParamList ps;
            if (d_joint_) append(ps, d_joint_->params("disc_i"));
            if (d_ord_) append(ps, d_ord_->params("disc_i"));
            if (d_rgb_) append(ps, d_rgb_->params("disc_r"));
            return ps;
          }(),
          cfg.base_lr, cfg.weight_decay) {
  cfg_.validate();
  TSGAN_CHECK(n_classes_ > 0, Config, "Trainer: n_classes must be positive");
}

Tensor Trainer::disc_i(const Tensor& images, const Tensor& fmaps, bool training) {
  if (d_joint_) return d_joint_->forward(images, fmaps, training);
  TSGAN_CHECK(d_ord_.has_value(), Config, "disc_i called with gan_mode=none");
  return d_ord_->forward(images, training);
}

Tensor Trainer::disc_r(const Tensor& images, bool training) {
  TSGAN_CHECK(d_rgb_.has_value(), Config, "disc_r called with gan_mode=none");
  return d_rgb_->forward(images, training);
}

void Trainer::check_only(const Adam& owner) const {
  auto sweep = [&](const Adam& opt, const char* tag) {
    if (&opt == &owner) return;
    for (const auto& p : opt.params())
      TSGAN_CHECK(!p.tensor.has_grad(), Numeric,
                  std::string("phase isolation violated: ") + tag + " parameter '" + p.name +
                      "' holds a gradient during another phase");
  };
  sweep(opt_g_, "generator");
  sweep(opt_b_, "backbone");
  sweep(opt_d_, "discriminator");
  for (auto& p : const_cast<Trainer*>(this)->teacher_.params())
    TSGAN_CHECK(!p.tensor.has_grad(), Numeric,
                "phase isolation violated: teacher parameter '" + p.name + "' holds a gradient");
}

// ---------------------------------------------------------------------------
// The three-phase step
// ---------------------------------------------------------------------------

LossReport Trainer::train_step(const ImageBatch& batch,
                               const std::function<void(int)>& after_phase) {
  TSGAN_CHECK(batch.p == cfg_.p && batch.k == cfg_.k, Data,
              "train_step: batch is " + std::to_string(batch.p) + "x" + std::to_string(batch.k) +
                  " but config wants " + std::to_string(cfg_.p) + "x" + std::to_string(cfg_.k));
  TSGAN_CHECK(batch.height == cfg_.input_h && batch.width == cfg_.input_w, Data,
              "train_step: batch resolution does not match config input size");

  const bool gan = cfg_.gan_mode != GanMode::None;
  const bool use_ts = cfg_.ts_mode != TsMode::None;
  const bool want_fakes =
      gan || use_ts || cfg_.include_fake_in_id || cfg_.include_fake_in_triplet;
  if (use_ts)
    TSGAN_CHECK(teacher_.ready(), Config,
                "teacher is not ready: pretrain and adopt/load a teacher before training with "
                "ts_mode != none");

  const Eigen::Index n = batch.pairs();
  const Tensor x_rgb =
      Tensor::from_array(Shape{n, 3, batch.height, batch.width}, batch.rgb);
  const Tensor x_ir = Tensor::from_array(Shape{n, 1, batch.height, batch.width}, batch.ir);

  LossReport rep;
  rep.epoch = cur_epoch_;
  rep.step = cur_step_;
  rep.lr = opt_b_.lr();

  Tensor fake_ir_det, fake_rgb_det;

  // ---- phase 1: generators --------------------------------------------------
  if (gan) {
    opt_g_.zero_grad();
    {
      FreezeGuard freeze_d(opt_d_.params());
      Tensor fake_ir = g_i_.forward(x_rgb, true);
      Tensor fake_rgb = g_r_.forward(x_ir, true);
      // Student feature map of the fake: a constant of this phase.
      Tensor fmap_fake;
      {
        NoGradGuard ng;
        fmap_fake = student_.former(replicate_ir(fake_ir.detach()), false);
      }
      Tensor adv =
          gen_adv_loss([this](const Tensor& im, const Tensor& fm) { return disc_i(im, fm, false); },
                       fake_ir, fmap_fake) +
          ordinary_gen_adv_loss([this](const Tensor& im) { return disc_r(im, false); }, fake_rgb);
      // Cycle terms, reusing the two fakes already computed.
      Tensor cyc = mean_all(abs_(g_r_.forward(fake_ir, true) - x_rgb)) +
                   mean_all(abs_(g_i_.forward(fake_rgb, true) - x_ir));
      Tensor total = gen_total(adv, cyc, cfg_.omega);
      rep.g_adv = adv.item();
      rep.cyc = cyc.item();
      rep.g = total.item();
      total.backward();
      fake_ir_det = fake_ir.detach();
      fake_rgb_det = fake_rgb.detach();
    }
    if (cfg_.debug_phase_checks) check_only(opt_g_);
    opt_g_.step(cfg_.grad_clip);
    opt_g_.zero_grad();
  } else if (want_fakes) {
    // No adversarial training: the identity-start generator is a fixed
    // projection, used only to synthesize the cross-domain inputs.
    NoGradGuard ng;
    fake_ir_det = g_i_.forward(x_rgb, false).detach();
  }
  if (after_phase) after_phase(1);

  // ---- phase 2: backbone -----------------------------------------------------
  opt_b_.zero_grad();
  {
    std::optional<FreezeGuard> freeze_d;
    if (gan) freeze_d.emplace(opt_d_.params());

    StudentOut out_rgb = student_.forward(x_rgb, true);
    StudentOut out_ir = student_.forward(replicate_ir(x_ir), true);
    const bool need_fake_student = fake_ir_det.defined() &&
                                   (cfg_.gan_mode == GanMode::Joint ||
                                    cfg_.ts_mode == TsMode::All || cfg_.include_fake_in_id ||
                                    cfg_.include_fake_in_triplet);
    StudentOut out_fake;
    if (need_fake_student) out_fake = student_.forward(replicate_ir(fake_ir_det), true);

    std::vector<int> real_labels(batch.identities);
    real_labels.insert(real_labels.end(), batch.identities.begin(), batch.identities.end());

    std::vector<Tensor> id_logits{out_rgb.logits, out_ir.logits};
    std::vector<int> id_labels = real_labels;
    if (cfg_.include_fake_in_id) {
      id_logits.push_back(out_fake.logits);
      id_labels.insert(id_labels.end(), batch.identities.begin(), batch.identities.end());
    }
    std::vector<Tensor> tri_vectors{out_rgb.v, out_ir.v};
    std::vector<int> tri_labels = real_labels;
    if (cfg_.include_fake_in_triplet) {
      tri_vectors.push_back(out_fake.v);
      tri_labels.insert(tri_labels.end(), batch.identities.begin(), batch.identities.end());
    }
    Tensor id = id_loss(concat_batch(id_logits), id_labels, cfg_.label_smooth);
    Tensor tri = triplet_loss(concat_batch(tri_vectors), tri_labels, cfg_.margin);

    Tensor gan_term;
    if (cfg_.gan_mode == GanMode::Joint) {
      PairSetM m;
      m.fake_fake = {fake_ir_det, out_fake.fmap};
      m.fake_real = {fake_ir_det, out_ir.fmap};
      m.real_fake = {x_ir, out_fake.fmap};
      gan_term = reid_gan_loss(
          [this](const Tensor& im, const Tensor& fm) { return disc_i(im, fm, false); }, m);
    } else if (cfg_.gan_mode == GanMode::Ordinary) {
      // No feature branch: the term carries no backbone gradient and is
      // reported for parity with the joint mode.
      gan_term = ordinary_gen_adv_loss(
          [this](const Tensor& im) { return d_ord_->forward(im, false); }, fake_ir_det);
    } else {
      gan_term = Tensor::scalar(0.0);
    }

    Tensor reid = reid_total(id, tri, gan_term, cfg_.lambda_id, cfg_.lambda_tri, cfg_.lambda_gan);
    rep.reid_id = id.item();
    rep.reid_tri = tri.item();
    rep.reid_gan = gan_term.item();
    rep.reid = reid.item();

    Tensor total = reid;
    if (use_ts) {
      Tensor ft_fake = teacher_.forward(replicate_ir(fake_ir_det));
      if (cfg_.ts_mode == TsMode::All) {
        Tensor ft_real = teacher_.forward(replicate_ir(x_ir));
        TsParts parts = ts_losses(ft_real, out_ir.fmap, ft_fake, out_fake.fmap, out_rgb.fmap);
        Tensor ts = ts_total(parts, cfg_.alpha_c, cfg_.alpha_s);
        rep.ts_real_ir = parts.real_ir.item();
        rep.ts_fake_ir = parts.fake_ir.item();
        rep.ts_cd = parts.cd.item();
        rep.ts = ts.item();
        total = total + ts;
      } else {  // CdOnly: Eq. 15 alone
        Tensor cd = mse(ft_fake, out_rgb.fmap);
        Tensor ts = cfg_.alpha_c * cd;
        rep.ts_cd = cd.item();
        rep.ts = ts.item();
        total = total + ts;
      }
    }
    rep.backbone = total.item();
    total.backward();
  }
  if (cfg_.debug_phase_checks) check_only(opt_b_);
  opt_b_.step(cfg_.grad_clip);
  opt_b_.zero_grad();
  if (after_phase) after_phase(2);

  // ---- phase 3: discriminators ----------------------------------------------
  if (gan) {
    opt_d_.zero_grad();
    Tensor f_real, f_fake;
    {
      NoGradGuard ng;  // post-phase-2 weights, held constant
      f_real = student_.former(replicate_ir(x_ir), false);
      if (d_joint_) f_fake = student_.former(replicate_ir(fake_ir_det), false);
    }
    DiscLossParts di;
    if (d_joint_) {
      PairSetM m;
      m.fake_fake = {fake_ir_det, f_fake};
      m.fake_real = {fake_ir_det, f_real};
      m.real_fake = {x_ir, f_fake};
      di = disc_loss([this](const Tensor& im, const Tensor& fm) { return disc_i(im, fm, true); },
                     x_ir, f_real, m);
    } else {
      di = ordinary_disc_loss([this](const Tensor& im) { return d_ord_->forward(im, true); },
                              x_ir, fake_ir_det);
    }
    DiscLossParts dr = ordinary_disc_loss(
        [this](const Tensor& im) { return disc_r(im, true); }, x_rgb, fake_rgb_det);
    Tensor total = di.total + dr.total;
    rep.d_real = di.real.item() + dr.real.item();
    rep.d_fake = di.fake.item() + dr.fake.item();
    rep.d = total.item();
    total.backward();
    if (cfg_.debug_phase_checks) check_only(opt_d_);
    opt_d_.step(cfg_.grad_clip);
    opt_d_.zero_grad();
  }
  if (after_phase) after_phase(3);

  TSGAN_CHECK(rep.finite(), Numeric, "non-finite loss in train step: " + rep.line());
  return rep;
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

int Trainer::steps_per_epoch(const TrainConfig& cfg, const Dataset& ds) {
  if (cfg.steps_per_epoch_override > 0) return cfg.steps_per_epoch_override;
  long long pairs = 0;
  for (int id = 0; id < ds.n_identities(); ++id)
    pairs += static_cast<long long>(
        std::min(ds.rgb_index[static_cast<std::size_t>(id)].size(),
                 ds.ir_index[static_cast<std::size_t>(id)].size()));
  const long long steps = pairs / (static_cast<long long>(cfg.p) * cfg.k);
  return static_cast<int>(std::clamp(steps, 1LL, static_cast<long long>(INT32_MAX)));
}

FitResult Trainer::fit(const Dataset& train_ds, const std::string& out_dir,
                       const Dataset* eval_ds, int eval_every, const EvalProtocol& proto) {
  TSGAN_CHECK(train_ds.split == Split::Train, Data, "fit: dataset is not a Train split");
  if (cfg_.ts_mode != TsMode::None)
    TSGAN_CHECK(teacher_.ready(), Config,
                "teacher is not ready: pretrain and adopt/load a teacher before fit");

  fs::create_directories(out_dir);
  FitResult res;
  res.log_path = (fs::path(out_dir) / "train_log.txt").string();
  std::ofstream log(res.log_path, next_epoch_ > 0 ? std::ios::app : std::ios::trunc);
  TSGAN_CHECK(log.good(), Io, "cannot open log for writing: " + res.log_path);
  log.precision(17);

  const int spe = steps_per_epoch(cfg_, train_ds);
  for (int epoch = next_epoch_; epoch < cfg_.epochs; ++epoch) {
    const Scalar lr = lr_at(cfg_, epoch);
    opt_g_.set_lr(lr);
    opt_b_.set_lr(lr);
    opt_d_.set_lr(lr);
    log << "# epoch " << epoch << " lr " << lr << "\n";

    Rng erng(derive_seed(cfg_.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    for (int s = 0; s < spe; ++s) {
      cur_epoch_ = epoch;
      cur_step_ = s;
      ImageBatch b = pk_sample(train_ds, cfg_.p, cfg_.k, erng);
      LossReport r = train_step(b);
      log << r.line() << "\n";
      res.reports.push_back(r);
    }
    log.flush();
    TSGAN_CHECK(log.good(), Io, "log write failed: " + res.log_path);
    next_epoch_ = epoch + 1;

    if (cfg_.checkpoint_interval > 0 && (epoch + 1) % cfg_.checkpoint_interval == 0 &&
        epoch + 1 < cfg_.epochs) {
      const std::string p =
          (fs::path(out_dir) / ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".tsgn"))
              .string();
      save_checkpoint(p);
      res.checkpoints.push_back(p);
    }
    if (eval_ds && eval_every > 0 && (epoch + 1) % eval_every == 0) {
      MetricsTable table =
          evaluate(student_, *eval_ds, proto, standard_cells(),
                   derive_seed(cfg_.seed, "fit_eval", static_cast<std::uint64_t>(epoch)),
                   cfg_.l2_normalize_features);
      const std::string mp =
          (fs::path(out_dir) / ("metrics_epoch_" + std::to_string(epoch + 1) + ".txt")).string();
      std::ofstream mf(mp, std::ios::trunc);
      TSGAN_CHECK(mf.good(), Io, "cannot write metrics snapshot: " + mp);
      mf << table.text() << "\n" << table.report();
      for (const auto& c : table.cells)
        log << "# eval epoch=" << epoch << " " << to_string(c.mode) << "/" << to_string(c.shot)
            << (c.ok ? " r1=" + std::to_string(c.r1) + " map=" + std::to_string(c.map)
                     : " failed: " + c.error)
            << "\n";
      log.flush();
    }
  }

  // leave the step counters at the start of the next epoch, mirroring what a
  // checkpoint reload produces
  cur_epoch_ = next_epoch_;
  cur_step_ = 0;

  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.tsgn").string();
  save_checkpoint(final_path);
  res.checkpoints.push_back(final_path);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace {

StateIndex trainer_state(Trainer& t) {
  StateIndex ix;
  ix.add_params(t.student().params("student"));
  ix.add_buffers(t.student().buffers("student"));
  ix.add_params(t.teacher().params("teacher"));
  ix.add_buffers(t.teacher().buffers("teacher"));
  ix.add_params(t.gen_ir().params("g_i"));
  ix.add_buffers(t.gen_ir().buffers("g_i"));
  ix.add_params(t.gen_rgb().params("g_r"));
  ix.add_buffers(t.gen_rgb().buffers("g_r"));
  // discriminator params are already reachable through opt_d, but their
  // buffers are not
  ix.add_params(t.opt_d().params());
  ix.add_optimizer("opt_g", t.opt_g());
  ix.add_optimizer("opt_b", t.opt_b());
  ix.add_optimizer("opt_d", t.opt_d());
  return ix;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  Trainer& self = *const_cast<Trainer*>(this);
  StateIndex ix = trainer_state(self);
  if (d_joint_) ix.add_buffers(self.d_joint_->buffers("disc_i"));
  if (d_ord_) ix.add_buffers(self.d_ord_->buffers("disc_i"));
  if (d_rgb_) ix.add_buffers(self.d_rgb_->buffers("disc_r"));

  json manifest;
  manifest["kind"] = "full";
  manifest["arch"] = arch_fingerprint(cfg_, n_classes_);
  manifest["config_hash"] = config_hash_hex(arch_fingerprint(cfg_, n_classes_));
  manifest["epoch"] = next_epoch_;
  manifest["n_classes"] = n_classes_;
  manifest["teacher_ready"] = teacher_.ready();
  manifest["opt_steps"] = {{"g", opt_g_.step_count()},
                           {"b", opt_b_.step_count()},
                           {"d", opt_d_.step_count()}};
  // learning rates are schedule-derived, but storing them makes a loaded
  // trainer step identically even outside fit()
  manifest["lr"] = {{"g", opt_g_.lr()}, {"b", opt_b_.lr()}, {"d", opt_d_.lr()}};
  std::vector<ArchiveEntry> entries;
  entries.reserve(ix.slots.size());
  for (auto& [name, arr] : ix.slots) entries.push_back({name, arr});
  write_archive(path, std::move(manifest), entries);
}

void Trainer::load_checkpoint(const std::string& path) {
  Archive a = read_archive(path);
  TSGAN_CHECK(a.manifest.value("kind", "") == "full", Data,
              "checkpoint at " + path + " is not a full training checkpoint");
  const std::string want = arch_fingerprint(cfg_, n_classes_);
  const std::string got = a.manifest.value("arch", "");
  TSGAN_CHECK(got == want, Config,
              "checkpoint architecture mismatch:\n  checkpoint: " + got + "\n  config:     " +
                  want);

  StateIndex ix = trainer_state(*this);
  if (d_joint_) ix.add_buffers(d_joint_->buffers("disc_i"));
  if (d_ord_) ix.add_buffers(d_ord_->buffers("disc_i"));
  if (d_rgb_) ix.add_buffers(d_rgb_->buffers("disc_r"));
  std::map<std::string, Array*> by_name;
  for (auto& [name, arr] : ix.slots) {
    auto [it, fresh] = by_name.emplace(name, arr);
    TSGAN_CHECK(fresh, Data, "duplicate state name: " + name);
  }

  const auto& arrays = a.manifest.at("arrays");
  TSGAN_CHECK(arrays.size() == by_name.size(), Data,
              "checkpoint carries " + std::to_string(arrays.size()) + " arrays but the model has " +
                  std::to_string(by_name.size()));
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const std::string name = arrays[static_cast<json::size_type>(i)].at("name").get<std::string>();
    auto it = by_name.find(name);
    TSGAN_CHECK(it != by_name.end(), Data, "checkpoint array '" + name + "' has no home");
    TSGAN_CHECK(a.payload[i].size() == it->second->size(), Data,
                "checkpoint array '" + name + "' count " + std::to_string(a.payload[i].size()) +
                    " != expected " + std::to_string(it->second->size()));
    *it->second = a.payload[i];
  }

  next_epoch_ = a.manifest.value("epoch", 0);
  teacher_.set_ready(a.manifest.value("teacher_ready", false));
  const auto& steps = a.manifest.at("opt_steps");
  opt_g_.set_step_count(steps.at("g").get<long long>());
  opt_b_.set_step_count(steps.at("b").get<long long>());
  opt_d_.set_step_count(steps.at("d").get<long long>());
  if (a.manifest.contains("lr")) {
    const auto& lr = a.manifest.at("lr");
    opt_g_.set_lr(lr.at("g").get<Scalar>());
    opt_b_.set_lr(lr.at("b").get<Scalar>());
    opt_d_.set_lr(lr.at("d").get<Scalar>());
  }
  cur_epoch_ = next_epoch_;
  cur_step_ = 0;
}

int checkpoint_classes(const std::string& path) {
  Archive a = read_archive(path);
  TSGAN_CHECK(a.manifest.value("kind", "") == "full", Data,
              "checkpoint at " + path + " is not a full training checkpoint");
  const int n = a.manifest.value("n_classes", 0);
  TSGAN_CHECK(n > 0, Data, "checkpoint at " + path + " does not record its class count");
  return n;
}

void save_teacher(const std::string& path, TeacherEncoder& teacher, const TrainConfig& cfg) {
  TSGAN_CHECK(teacher.ready(), Config, "save_teacher: teacher has not adopted any weights");
  StateIndex ix;
  ix.add_params(teacher.params("teacher"));
  ix.add_buffers(teacher.buffers("teacher"));
  json manifest;
  manifest["kind"] = "teacher";
  manifest["arch"] = arch_fingerprint(cfg, /*n_classes=*/0);
  manifest["config_hash"] = config_hash_hex(arch_fingerprint(cfg, 0));
  manifest["teacher_ready"] = true;
  std::vector<ArchiveEntry> entries;
  for (auto& [name, arr] : ix.slots) entries.push_back({name, arr});
  write_archive(path, std::move(manifest), entries);
}

TeacherEncoder load_teacher(const std::string& path, const TrainConfig& cfg) {
  Archive a = read_archive(path);
  TSGAN_CHECK(a.manifest.value("kind", "") == "teacher", Data,
              "archive at " + path + " is not a teacher checkpoint");
  const std::string want = arch_fingerprint(cfg, 0);
  const std::string got = a.manifest.value("arch", "");
  TSGAN_CHECK(got == want, Config,
              "teacher architecture mismatch:\n  checkpoint: " + got + "\n  config:     " + want);

  TeacherEncoder teacher(cfg);
  StateIndex ix;
  ix.add_params(teacher.params("teacher"));
  ix.add_buffers(teacher.buffers("teacher"));
  std::map<std::string, Array*> by_name;
  for (auto& [name, arr] : ix.slots) by_name.emplace(name, arr);
  const auto& arrays = a.manifest.at("arrays");
  TSGAN_CHECK(arrays.size() == by_name.size(), Data, "teacher checkpoint array count mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const std::string name = arrays[static_cast<json::size_type>(i)].at("name").get<std::string>();
    auto it = by_name.find(name);
    TSGAN_CHECK(it != by_name.end(), Data, "teacher checkpoint array '" + name + "' has no home");
    TSGAN_CHECK(a.payload[i].size() == it->second->size(), Data,
                "teacher checkpoint array '" + name + "' size mismatch");
    *it->second = a.payload[i];
  }
  teacher.set_ready(true);
  return teacher;
}

// ---------------------------------------------------------------------------
// Teacher pretraining
// ---------------------------------------------------------------------------

PretrainResult pretrain_teacher(const Dataset& ir_dataset, const TrainConfig& cfg) {
  cfg.validate();
  TSGAN_CHECK(!ir_dataset.items.empty(), Data, "pretrain_teacher: empty dataset");
  for (const auto& it : ir_dataset.items)
    TSGAN_CHECK(it.modality == Modality::IR, Data,
                "pretrain_teacher: dataset contains RGB images; restrict it to the IR modality");

  // Hold one probe image per identity out of training; the rest are gallery.
  Dataset train_ds = ir_dataset;
  std::vector<int> query_idx, gallery_idx;
  for (auto& lane : train_ds.ir_index) {
    if (lane.size() >= 2) {
      query_idx.push_back(lane.front());
      lane.erase(lane.begin());
    }
    for (int i : lane) gallery_idx.push_back(i);
  }
  TSGAN_CHECK(!query_idx.empty(), Data,
              "pretrain_teacher: no identity has two IR images; cannot hold out probes");

  Rng init_rng(derive_seed(cfg.seed, "teacher_init"));
  StudentBackbone baseline(cfg, ir_dataset.n_identities(), init_rng);
  Adam opt(baseline.params("teacher_baseline"), cfg.base_lr, cfg.weight_decay);

  const int spe = std::max<int>(
      1, static_cast<int>(train_ds.items.size()) / (cfg.p * cfg.k));
  const int steps = cfg.teacher_steps > 0 ? cfg.teacher_steps : cfg.epochs * spe;

  PretrainResult res{TeacherEncoder(cfg), 0.0, 0.0, 0.0, 0.0, {}};
  Rng srng(derive_seed(cfg.seed, "teacher_sample"));
  for (int s = 0; s < steps; ++s) {
    ModalityBatch b = pk_sample_single(train_ds, Modality::IR, cfg.p, cfg.k, srng);
    Tensor x = replicate_ir(Tensor::from_array(
        Shape{b.count(), 1, ir_dataset.height, ir_dataset.width}, b.images));
    StudentOut out = baseline.forward(x, true);
    Tensor loss = cfg.lambda_id * id_loss(out.logits, b.identities, cfg.label_smooth) +
                  cfg.lambda_tri * triplet_loss(out.v, b.identities, cfg.margin);
    const Scalar value = loss.item();
    TSGAN_CHECK(std::isfinite(value), Numeric,
                "pretrain_teacher: non-finite loss at step " + std::to_string(s));
    opt.zero_grad();
    loss.backward();
    opt.step(cfg.grad_clip);
    opt.zero_grad();
    if (s == 0) res.first_loss = value;
    res.last_loss = value;
    if (s % std::max(1, steps / 10) == 0 || s == steps - 1)
      res.log.push_back("step " + std::to_string(s) + "/" + std::to_string(steps) +
                        " loss " + std::to_string(value));
  }

  // Holdout IR-vs-IR retrieval with the baseline's embeddings.
  Eigen::MatrixXd qf = extract_features(baseline, ir_dataset, query_idx);
  Eigen::MatrixXd gf = extract_features(baseline, ir_dataset, gallery_idx);
  auto meta = [&](const std::vector<int>& idx, std::vector<int>& ids, std::vector<int>& cams) {
    for (int i : idx) {
      ids.push_back(ir_dataset.items[static_cast<std::size_t>(i)].identity);
      cams.push_back(ir_dataset.items[static_cast<std::size_t>(i)].camera);
    }
  };
  std::vector<int> q_ids, q_cams, g_ids, g_cams;
  meta(query_idx, q_ids, q_cams);
  meta(gallery_idx, g_ids, g_cams);
  CmcResult r =
      cmc_map(distance_matrix(qf, gf), q_ids, q_cams, g_ids, g_cams, EvalProtocol{});
  res.r1 = r.r1 / 100.0;
  res.map = r.map / 100.0;
  res.log.push_back("holdout IR-vs-IR r1 " + std::to_string(res.r1) + " map " +
                    std::to_string(res.map) + " (evaluated " + std::to_string(r.evaluated) +
                    ", dropped " + std::to_string(r.dropped) + ")");

  res.teacher.adopt(baseline);
  return res;
}

}  // namespace tsgan
