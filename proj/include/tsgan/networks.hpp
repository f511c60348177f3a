#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsgan/config.hpp"
#include "tsgan/image.hpp"
#include "tsgan/ops.hpp"

namespace tsgan {

// Named views over a model's state: parameters join the autodiff graph and the
// optimizer; buffers (batch-norm running statistics) are plain arrays that
// only checkpointing touches.
struct NamedParam {
  std::string name;
  Tensor tensor;
};
struct NamedBuffer {
  std::string name;
  Array* array;
};
using ParamList = std::vector<NamedParam>;
using BufferList = std::vector<NamedBuffer>;

// Weight init families: fan-in scaled gaussian for the backbone, truncated
// normal (std 0.02) for GAN parts, zeros for identity-start layers.
enum class Init { FanIn, TruncNormal002, Zero };

// Scoped requires_grad=false over a parameter set: ops treat the frozen
// parameters as constants, so backward cannot deposit gradients into them.
// Used for the phase isolation of the alternating updates (e.g. the backbone
// phase keeps the discriminator fixed while gradients still flow through its
// activations). The guard must stay alive across both the forward pass and
// the backward() call: accumulation is gated when gradients propagate.
class FreezeGuard {
 public:
  explicit FreezeGuard(const ParamList& params) : params_(params) {
    prev_.reserve(params_.size());
    for (auto& p : params_) {
      prev_.push_back(p.tensor.requires_grad());
      p.tensor.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i)
      params_[i].tensor.set_requires_grad(prev_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamList params_;
  std::vector<bool> prev_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  Tensor w, b;  // [F,C,k,k], [F]
  int stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng, Init init);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(ParamList& ps, const std::string& prefix) const;
};

struct BatchNormLayer {
  Tensor gamma, beta;
  BNStats stats;
  Scalar momentum = 0.1;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels, Scalar momentum = 0.1);
  Tensor forward(const Tensor& x, bool training) {
    return batchnorm2d(x, gamma, beta, stats, training, momentum);
  }
  void collect(ParamList& ps, BufferList& bs, const std::string& prefix);
};

struct LinearLayer {
  Tensor w, b;  // [in,out], [out]

  LinearLayer() = default;
  LinearLayer(int in_dim, int out_dim, Rng& rng, Init init);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(ParamList& ps, const std::string& prefix) const;
};

// Basic residual block: conv-bn-relu-conv-bn + shortcut, relu after the sum.
// A projection shortcut appears when the stride or width changes.
struct ResBlockLayer {
  Conv2dLayer conv1, conv2;
  BatchNormLayer bn1, bn2;
  bool has_proj = false;
  Conv2dLayer proj;
  BatchNormLayer bn_proj;

  ResBlockLayer() = default;
  ResBlockLayer(int in_ch, int out_ch, int stride, Scalar bn_momentum, Rng& rng, Init init);
  Tensor forward(const Tensor& x, bool training);
  void collect(ParamList& ps, BufferList& bs, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Student backbone, split into former (FE_S) and latter (LE_S) encoders
// ---------------------------------------------------------------------------

struct StudentOut {
  Tensor fmap;    // FE_S output [N,C,H/8,W/8]
  Tensor v;       // embedding [N,d]
  Tensor logits;  // [N,n_classes]
};

// IR tensors are single-channel; the shared backbone consumes 3 channels.
Tensor replicate_ir(const Tensor& ir);

class StudentBackbone {
 public:
  StudentBackbone(const TrainConfig& cfg, int n_classes, Rng& rng);

  // x: [N,3,H,W] normalized pixels. FE = stem + stages 0..2 (stride 8).
  Tensor former(const Tensor& x, bool training);
  // LE = stage 3 (stride 1), keeps the fmap's spatial grid.
  Tensor latter(const Tensor& fmap, bool training);
  // (V, F) = (GAP(latter), FC(V))
  std::pair<Tensor, Tensor> head(const Tensor& latter_out) const;

  StudentOut forward(const Tensor& x, bool training);

  ParamList params(const std::string& prefix = "student");
  BufferList buffers(const std::string& prefix = "student");
  ParamList former_params(const std::string& prefix = "student");

  int n_classes() const { return n_classes_; }
  int fmap_channels() const { return widths_[2]; }
  int embedding_dim() const { return widths_[3]; }

 private:
  friend class TeacherEncoder;
  std::vector<int> widths_;
  int n_classes_ = 0;
  Conv2dLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<ResBlockLayer> stages_[4];
  LinearLayer fc_;
};

// Frozen copy of the former encoder. Forward always runs in inference mode
// with fixed statistics and never joins the autodiff graph.
class TeacherEncoder {
 public:
  explicit TeacherEncoder(const TrainConfig& cfg);

  // Copies FE_S weights and running stats; marks the teacher ready.
  void adopt(StudentBackbone& s);
  bool ready() const { return ready_; }
  void set_ready(bool r) { ready_ = r; }

  Tensor forward(const Tensor& x) const;

  ParamList params(const std::string& prefix = "teacher");
  BufferList buffers(const std::string& prefix = "teacher");

 private:
  std::vector<int> widths_;
  mutable Conv2dLayer stem_;
  mutable BatchNormLayer stem_bn_;
  mutable std::vector<ResBlockLayer> stages_[3];
  bool ready_ = false;
};

// ---------------------------------------------------------------------------
// Generators: fixed channel-projection skip + learned residual trunk, output
// hard-clamped to [-1,1]. The final conv starts at zero so a freshly built
// generator is exactly the channel projection (identity start).
// ---------------------------------------------------------------------------

enum class GenDirection { RgbToIr, IrToRgb };

class Generator {
 public:
  Generator(GenDirection dir, const TrainConfig& cfg, Rng& rng, bool identity_start = true);

  Tensor forward(const Tensor& x, bool training);
  GenDirection direction() const { return dir_; }
  int out_channels() const { return dir_ == GenDirection::RgbToIr ? 1 : 3; }

  ParamList params(const std::string& prefix);
  BufferList buffers(const std::string& prefix);

 private:
  GenDirection dir_;
  Tensor proj_w_;  // fixed (non-trained) channel projection for the skip
  Conv2dLayer stem_, down1_, down2_;
  BatchNormLayer stem_bn_, down1_bn_, down2_bn_;
  std::vector<ResBlockLayer> res_;
  Conv2dLayer up1_, up2_, final_;
  BatchNormLayer up1_bn_, up2_bn_;
};

// ---------------------------------------------------------------------------
// Discriminators. The joint discriminator consumes an (IR image, feature map)
// pair: the image branch downsamples to the feature grid (stride 8), the
// feature branch reduces channels with a 1x1 conv, both halves concatenate
// along channels into a conv head ending in one sigmoid probability.
// ---------------------------------------------------------------------------

class JointDiscriminator {
 public:
  JointDiscriminator(const TrainConfig& cfg, int fmap_channels, Rng& rng);

  // image: [N,1,H,W]; fmap: [N,C,H/8,W/8] -> probability [N,1] in (0,1)
  Tensor forward(const Tensor& image, const Tensor& fmap, bool training);

  ParamList params(const std::string& prefix = "disc_i");
  BufferList buffers(const std::string& prefix = "disc_i");

 private:
  Conv2dLayer img1_, img2_, img3_, feat_, fuse_;
  BatchNormLayer img2_bn_, img3_bn_, fuse_bn_;
  LinearLayer head_;
};

// Image-only discriminator (D_R, and the ablation stand-in for D_I).
class OrdinaryDiscriminator {
 public:
  OrdinaryDiscriminator(int in_channels, const TrainConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& image, bool training);

  ParamList params(const std::string& prefix);
  BufferList buffers(const std::string& prefix);

 private:
  Conv2dLayer c1_, c2_, c3_, c4_;
  BatchNormLayer b2_, b3_, b4_;
  LinearLayer head_;
};

}  // namespace tsgan
