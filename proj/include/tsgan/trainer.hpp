#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsgan/dataset.hpp"
#include "tsgan/evaluator.hpp"
#include "tsgan/losses.hpp"
#include "tsgan/networks.hpp"

namespace tsgan {

// Warmup + step-decay schedule on the epoch domain [0, cfg.epochs):
// epoch < warmup_epochs -> base_lr * (epoch + 1) / warmup_epochs,
// else base_lr * decay_factor^(number of decay epochs <= epoch).
Scalar lr_at(const TrainConfig& cfg, int epoch);

// Adaptive-moment optimizer with decoupled weight decay over a named
// parameter list. Parameters whose gradient buffer is empty are skipped
// entirely (no moment update, no decay), so an optimizer that saw no
// gradients leaves its parameters bit-identical.
class Adam {
 public:
  Adam(ParamList params, Scalar lr, Scalar weight_decay, Scalar beta1 = 0.9,
       Scalar beta2 = 0.999, Scalar eps = 1e-8);

  void set_lr(Scalar lr) { lr_ = lr; }
  Scalar lr() const { return lr_; }

  void zero_grad();
  // grad_clip > 0 rescales the group's gradients to that global L2 norm.
  void step(Scalar grad_clip = 0.0);

  const ParamList& params() const { return params_; }
  bool any_grad() const;

  // Checkpoint access: slots are index-aligned with params().
  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }
  Array& moment1(std::size_t i) { return m_[i]; }
  Array& moment2(std::size_t i) { return v_[i]; }

 private:
  ParamList params_;
  std::vector<Array> m_, v_;
  Scalar lr_, weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

// IR-only baseline pretraining. Trains a full backbone (all four stages +
// GAP + FC) with the identity and triplet losses on P x K batches, then
// freezes its former encoder into a TeacherEncoder. One image per identity
// is held out of training as the retrieval probe; the rest form the gallery.
struct PretrainResult {
  TeacherEncoder teacher;
  double r1 = 0;             // holdout IR-vs-IR rank-1, fraction in [0,1]
  double map = 0;            // holdout mAP, fraction in [0,1]
  double first_loss = 0;     // id+triplet total at the first step
  double last_loss = 0;      // ... and at the last step
  std::vector<std::string> log;
};
PretrainResult pretrain_teacher(const Dataset& ir_dataset, const TrainConfig& cfg);

struct FitResult {
  std::vector<LossReport> reports;
  std::vector<std::string> checkpoints;  // paths, final one last
  std::string log_path;
};

// Owns the networks and the three optimizers; runs the three-phase
// alternating update:
//   phase 1  generators      L_G = adv(G_I) + adv(G_R) + omega * cycle
//   phase 2  backbone        L_Backbone = L_ReID + L_TS
//   phase 3  discriminators  L_D = joint real/fake + RGB-side real/fake
// Phase k steps only optimizer k; the other parameter sets are frozen or see
// detached inputs, so their gradient buffers stay empty.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, int n_classes);

  const TrainConfig& config() const { return cfg_; }
  int n_classes() const { return n_classes_; }

  StudentBackbone& student() { return student_; }
  TeacherEncoder& teacher() { return teacher_; }
  Generator& gen_ir() { return g_i_; }
  Generator& gen_rgb() { return g_r_; }
  Adam& opt_g() { return opt_g_; }
  Adam& opt_b() { return opt_b_; }
  Adam& opt_d() { return opt_d_; }

  // One Algorithm-1 step over a 2*P*K batch. `after_phase(k)` (k = 1,2,3)
  // fires right after phase k's optimizer step, for audits. Throws a Numeric
  // error carrying the report line if any loss went non-finite.
  LossReport train_step(const ImageBatch& batch,
                        const std::function<void(int)>& after_phase = {});

  // Epoch loop: per-epoch lr from lr_at applied to all three optimizers,
  // batches drawn from a per-epoch seeded stream (so a resumed run replays
  // the identical sequence), one LossReport line per step appended to
  // out_dir/train_log.txt plus `# epoch` markers. Checkpoints land in
  // out_dir every cfg.checkpoint_interval epochs and at the end. When
  // eval_ds is given, every eval_every epochs a metrics snapshot is written
  // and summarized into the log.
  FitResult fit(const Dataset& train_ds, const std::string& out_dir,
                const Dataset* eval_ds = nullptr, int eval_every = 0,
                const EvalProtocol& proto = {});

  // Archive of every parameter, buffer, and optimizer slot plus the resume
  // epoch; see docs/checkpoint-format in the README. Loading restores into a
  // Trainer built from the same architecture config (fingerprint checked).
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  int next_epoch() const { return next_epoch_; }

  static int steps_per_epoch(const TrainConfig& cfg, const Dataset& ds);

 private:
  Tensor disc_i(const Tensor& images, const Tensor& fmaps, bool training);
  Tensor disc_r(const Tensor& images, bool training);
  void check_only(const Adam& owner) const;  // debug phase-isolation assert

  TrainConfig cfg_;
  int n_classes_;
  StudentBackbone student_;
  TeacherEncoder teacher_;
  Generator g_i_, g_r_;
  std::optional<JointDiscriminator> d_joint_;
  std::optional<OrdinaryDiscriminator> d_ord_;  // D_I stand-in (gan_mode ordinary)
  std::optional<OrdinaryDiscriminator> d_rgb_;  // D_R
  Adam opt_g_, opt_b_, opt_d_;
  int next_epoch_ = 0;
  int cur_epoch_ = 0, cur_step_ = 0;  // stamped into reports/diagnostics by fit
};

// Teacher-only archive (same container format, kind = "teacher").
void save_teacher(const std::string& path, TeacherEncoder& teacher, const TrainConfig& cfg);
TeacherEncoder load_teacher(const std::string& path, const TrainConfig& cfg);

// Identity-classifier width recorded in a full checkpoint, so a Trainer of
// the right shape can be built before loading it.
int checkpoint_classes(const std::string& path);

}  // namespace tsgan
