#include "tsgan/networks.hpp"

namespace tsgan {

namespace {

Scalar trunc_normal(Rng& rng, Scalar std) {
  Scalar v;
  do {
    v = rng.gaussian();
  } while (std::abs(v) > 2.0);
  return v * std;
}

Array init_array(Eigen::Index n, Eigen::Index fan_in, Rng& rng, Init init) {
  Array a(n);
  switch (init) {
    case Init::Zero:
      a.setZero();
      break;
    case Init::TruncNormal002:
      for (Eigen::Index i = 0; i < n; ++i) a[i] = trunc_normal(rng, 0.02);
      break;
    case Init::FanIn: {
      const Scalar std = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
      for (Eigen::Index i = 0; i < n; ++i) a[i] = std * rng.gaussian();
      break;
    }
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng, Init init)
    : stride(stride), pad(pad) {
  const Eigen::Index fan_in = static_cast<Eigen::Index>(in_ch) * k * k;
  w = Tensor::from_array(Shape{out_ch, in_ch, k, k},
                         init_array(static_cast<Eigen::Index>(out_ch) * fan_in, fan_in, rng, init),
                         true);
  b = Tensor::from_array(Shape{out_ch}, Array::Zero(out_ch), true);
}

void Conv2dLayer::collect(ParamList& ps, const std::string& prefix) const {
  ps.push_back({prefix + ".w", w});
  ps.push_back({prefix + ".b", b});
}

BatchNormLayer::BatchNormLayer(int channels, Scalar momentum) : momentum(momentum) {
  gamma = Tensor::from_array(Shape{channels}, Array::Ones(channels), true);
  beta = Tensor::from_array(Shape{channels}, Array::Zero(channels), true);
  stats.init(channels);
}

void BatchNormLayer::collect(ParamList& ps, BufferList& bs, const std::string& prefix) {
  ps.push_back({prefix + ".gamma", gamma});
  ps.push_back({prefix + ".beta", beta});
  bs.push_back({prefix + ".running_mean", &stats.mean});
  bs.push_back({prefix + ".running_var", &stats.var});
}

LinearLayer::LinearLayer(int in_dim, int out_dim, Rng& rng, Init init) {
  w = Tensor::from_array(Shape{in_dim, out_dim},
                         init_array(static_cast<Eigen::Index>(in_dim) * out_dim, in_dim, rng, init),
                         true);
  b = Tensor::from_array(Shape{out_dim}, Array::Zero(out_dim), true);
}

void LinearLayer::collect(ParamList& ps, const std::string& prefix) const {
  ps.push_back({prefix + ".w", w});
  ps.push_back({prefix + ".b", b});
}

ResBlockLayer::ResBlockLayer(int in_ch, int out_ch, int stride, Scalar bn_momentum, Rng& rng,
                             Init init)
    : conv1(in_ch, out_ch, 3, stride, 1, rng, init),
      conv2(out_ch, out_ch, 3, 1, 1, rng, init),
      bn1(out_ch, bn_momentum),
      bn2(out_ch, bn_momentum),
      has_proj(stride != 1 || in_ch != out_ch) {
  if (has_proj) {
    proj = Conv2dLayer(in_ch, out_ch, 1, stride, 0, rng, init);
    bn_proj = BatchNormLayer(out_ch, bn_momentum);
  }
}

Tensor ResBlockLayer::forward(const Tensor& x, bool training) {
  Tensor y = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x), training))), training);
  Tensor s = has_proj ? bn_proj.forward(proj.forward(x), training) : x;
  return relu(y + s);
}

void ResBlockLayer::collect(ParamList& ps, BufferList& bs, const std::string& prefix) {
  conv1.collect(ps, prefix + ".conv1");
  bn1.collect(ps, bs, prefix + ".bn1");
  conv2.collect(ps, prefix + ".conv2");
  bn2.collect(ps, bs, prefix + ".bn2");
  if (has_proj) {
    proj.collect(ps, prefix + ".proj");
    bn_proj.collect(ps, bs, prefix + ".bn_proj");
  }
}

// ---------------------------------------------------------------------------
// Student backbone
// ---------------------------------------------------------------------------

Tensor replicate_ir(const Tensor& ir) {
  TSGAN_CHECK(ir.shape().rank == 4 && ir.shape()[1] == 1, Data,
              "replicate_ir: expected [N,1,H,W], got " + ir.shape().str());
  return repeat_channels(ir, 3);
}

StudentBackbone::StudentBackbone(const TrainConfig& cfg, int n_classes, Rng& rng)
    : widths_(cfg.widths), n_classes_(n_classes) {
  TSGAN_CHECK(n_classes > 0, Config, "StudentBackbone: n_classes must be positive");
  stem_ = Conv2dLayer(3, widths_[0], 3, 1, 1, rng, Init::FanIn);
  stem_bn_ = BatchNormLayer(widths_[0], cfg.bn_momentum);
  const int strides[4] = {2, 2, 2, 1};
  int in_ch = widths_[0];
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int stride = b == 0 ? strides[s] : 1;
      const int in = b == 0 ? in_ch : widths_[static_cast<std::size_t>(s)];
      stages_[s].emplace_back(in, widths_[static_cast<std::size_t>(s)], stride, cfg.bn_momentum,
                              rng, Init::FanIn);
    }
    in_ch = widths_[static_cast<std::size_t>(s)];
  }
  fc_ = LinearLayer(widths_[3], n_classes, rng, Init::FanIn);
}

Tensor StudentBackbone::former(const Tensor& x, bool training) {
  TSGAN_CHECK(x.shape().rank == 4 && x.shape()[1] == 3, Data,
              "former: expected [N,3,H,W], got " + x.shape().str());
  Tensor y = relu(stem_bn_.forward(stem_.forward(x), training));
  for (int s = 0; s < 3; ++s)
    for (auto& blk : stages_[s]) y = blk.forward(y, training);
  return y;
}

Tensor StudentBackbone::latter(const Tensor& fmap, bool training) {
  Tensor y = fmap;
  for (auto& blk : stages_[3]) y = blk.forward(y, training);
  return y;
}

std::pair<Tensor, Tensor> StudentBackbone::head(const Tensor& latter_out) const {
  Tensor v = gap2d(latter_out);
  Tensor logits = fc_.forward(v);
  return {v, logits};
}

StudentOut StudentBackbone::forward(const Tensor& x, bool training) {
  StudentOut out;
  out.fmap = former(x, training);
  Tensor le = latter(out.fmap, training);
  auto [v, logits] = head(le);
  out.v = v;
  out.logits = logits;
  return out;
}

ParamList StudentBackbone::params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_.collect(ps, prefix + ".stem");
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  for (int s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(ps, bs, prefix + ".stage" + std::to_string(s) + ".block" +
                                        std::to_string(b));
  fc_.collect(ps, prefix + ".fc");
  return ps;
}

BufferList StudentBackbone::buffers(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  for (int s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(ps, bs, prefix + ".stage" + std::to_string(s) + ".block" +
                                        std::to_string(b));
  return bs;
}

ParamList StudentBackbone::former_params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_.collect(ps, prefix + ".stem");
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  for (int s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(ps, bs, prefix + ".stage" + std::to_string(s) + ".block" +
                                        std::to_string(b));
  return ps;
}

// ---------------------------------------------------------------------------
// Teacher encoder
// ---------------------------------------------------------------------------

TeacherEncoder::TeacherEncoder(const TrainConfig& cfg) : widths_(cfg.widths) {
  Rng scratch(0);  // values are placeholders until adopt()/checkpoint load
  stem_ = Conv2dLayer(3, widths_[0], 3, 1, 1, scratch, Init::Zero);
  stem_bn_ = BatchNormLayer(widths_[0], cfg.bn_momentum);
  const int strides[3] = {2, 2, 2};
  int in_ch = widths_[0];
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int stride = b == 0 ? strides[s] : 1;
      const int in = b == 0 ? in_ch : widths_[static_cast<std::size_t>(s)];
      stages_[s].emplace_back(in, widths_[static_cast<std::size_t>(s)], stride, cfg.bn_momentum,
                              scratch, Init::Zero);
    }
    in_ch = widths_[static_cast<std::size_t>(s)];
  }
  // teacher parameters never join the optimizer or the graph
  for (auto& p : params()) p.tensor.set_requires_grad(false);
}

void TeacherEncoder::adopt(StudentBackbone& s) {
  ParamList mine = params();
  ParamList theirs = s.former_params("teacher");  // same naming scheme for the FE subset
  TSGAN_CHECK(mine.size() == theirs.size(), Config,
              "teacher adopt: parameter count mismatch (architecture differs)");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    TSGAN_CHECK(mine[i].name == theirs[i].name, Config,
                "teacher adopt: parameter order mismatch at " + mine[i].name);
    TSGAN_CHECK(mine[i].tensor.shape() == theirs[i].tensor.shape(), Config,
                "teacher adopt: shape mismatch at " + mine[i].name);
    mine[i].tensor.value() = theirs[i].tensor.value();
  }
  BufferList mb = buffers();
  BufferList sb = s.buffers("teacher");
  // student buffers include stage 3; keep only the FE subset by name match
  std::size_t j = 0;
  for (auto& buf : mb) {
    while (j < sb.size() && sb[j].name != buf.name) ++j;
    TSGAN_CHECK(j < sb.size(), Config, "teacher adopt: missing buffer " + buf.name);
    *buf.array = *sb[j].array;
  }
  ready_ = true;
}

Tensor TeacherEncoder::forward(const Tensor& x) const {
  TSGAN_CHECK(ready_, Config, "teacher encoder used before pretraining weights were loaded");
  NoGradGuard off;
  Tensor y = relu(stem_bn_.forward(stem_.forward(x), false));
  for (int s = 0; s < 3; ++s)
    for (auto& blk : stages_[s]) y = blk.forward(y, false);
  return y;
}

ParamList TeacherEncoder::params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_.collect(ps, prefix + ".stem");
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  for (int s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(ps, bs, prefix + ".stage" + std::to_string(s) + ".block" +
                                        std::to_string(b));
  return ps;
}

BufferList TeacherEncoder::buffers(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  for (int s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(ps, bs, prefix + ".stage" + std::to_string(s) + ".block" +
                                        std::to_string(b));
  return bs;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

Generator::Generator(GenDirection dir, const TrainConfig& cfg, Rng& rng, bool identity_start)
    : dir_(dir) {
  const int in_ch = dir == GenDirection::RgbToIr ? 3 : 1;
  const int out_ch = out_channels();
  const int base = cfg.gen_base_width;

  if (dir == GenDirection::RgbToIr) {
    // fixed luminance projection; weights sum to 1 so [-1,1] maps into [-1,1]
    Array lum(3);
    lum << 0.299, 0.587, 0.114;
    proj_w_ = Tensor::from_array(Shape{1, 3, 1, 1}, lum, false);
  }

  stem_ = Conv2dLayer(in_ch, base, 3, 1, 1, rng, Init::TruncNormal002);
  stem_bn_ = BatchNormLayer(base, cfg.bn_momentum);
  down1_ = Conv2dLayer(base, 2 * base, 3, 2, 1, rng, Init::TruncNormal002);
  down1_bn_ = BatchNormLayer(2 * base, cfg.bn_momentum);
  down2_ = Conv2dLayer(2 * base, 4 * base, 3, 2, 1, rng, Init::TruncNormal002);
  down2_bn_ = BatchNormLayer(4 * base, cfg.bn_momentum);
  for (int r = 0; r < cfg.gen_res_blocks; ++r)
    res_.emplace_back(4 * base, 4 * base, 1, cfg.bn_momentum, rng, Init::TruncNormal002);
  up1_ = Conv2dLayer(4 * base, 2 * base, 3, 1, 1, rng, Init::TruncNormal002);
  up1_bn_ = BatchNormLayer(2 * base, cfg.bn_momentum);
  up2_ = Conv2dLayer(2 * base, base, 3, 1, 1, rng, Init::TruncNormal002);
  up2_bn_ = BatchNormLayer(base, cfg.bn_momentum);
  final_ = Conv2dLayer(base, out_ch, 3, 1, 1, rng,
                       identity_start ? Init::Zero : Init::TruncNormal002);
}

Tensor Generator::forward(const Tensor& x, bool training) {
  const int expect_in = dir_ == GenDirection::RgbToIr ? 3 : 1;
  TSGAN_CHECK(x.shape().rank == 4 && x.shape()[1] == expect_in, Data,
              "generator: expected " + std::to_string(expect_in) + "-channel input, got " +
                  x.shape().str());
  TSGAN_CHECK(x.shape()[2] % 4 == 0 && x.shape()[3] % 4 == 0, Data,
              "generator: spatial size must be divisible by 4");

  Tensor skip = dir_ == GenDirection::RgbToIr
                    ? conv2d(x, proj_w_, Tensor::zeros(Shape{1}), 1, 0)
                    : repeat_channels(x, 3);

  Tensor y = relu(stem_bn_.forward(stem_.forward(x), training));
  y = relu(down1_bn_.forward(down1_.forward(y), training));
  y = relu(down2_bn_.forward(down2_.forward(y), training));
  for (auto& blk : res_) y = blk.forward(y, training);
  y = relu(up1_bn_.forward(up1_.forward(upsample2(y)), training));
  y = relu(up2_bn_.forward(up2_.forward(upsample2(y)), training));
  y = final_.forward(y);
  return clamp(skip + y, -1.0, 1.0);
}

ParamList Generator::params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_.collect(ps, prefix + ".stem");
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  down1_.collect(ps, prefix + ".down1");
  down1_bn_.collect(ps, bs, prefix + ".down1_bn");
  down2_.collect(ps, prefix + ".down2");
  down2_bn_.collect(ps, bs, prefix + ".down2_bn");
  for (std::size_t r = 0; r < res_.size(); ++r)
    res_[r].collect(ps, bs, prefix + ".res" + std::to_string(r));
  up1_.collect(ps, prefix + ".up1");
  up1_bn_.collect(ps, bs, prefix + ".up1_bn");
  up2_.collect(ps, prefix + ".up2");
  up2_bn_.collect(ps, bs, prefix + ".up2_bn");
  final_.collect(ps, prefix + ".final");
  return ps;
}

BufferList Generator::buffers(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  stem_bn_.collect(ps, bs, prefix + ".stem_bn");
  down1_bn_.collect(ps, bs, prefix + ".down1_bn");
  down2_bn_.collect(ps, bs, prefix + ".down2_bn");
  for (std::size_t r = 0; r < res_.size(); ++r)
    res_[r].collect(ps, bs, prefix + ".res" + std::to_string(r));
  up1_bn_.collect(ps, bs, prefix + ".up1_bn");
  up2_bn_.collect(ps, bs, prefix + ".up2_bn");
  // resblock collect() adds its conv params to ps; only bs escapes here
  return bs;
}

// ---------------------------------------------------------------------------
// Discriminators
// ---------------------------------------------------------------------------

JointDiscriminator::JointDiscriminator(const TrainConfig& cfg, int fmap_channels, Rng& rng) {
  const int base = cfg.disc_base_width;
  img1_ = Conv2dLayer(1, base, 3, 2, 1, rng, Init::TruncNormal002);
  img2_ = Conv2dLayer(base, 2 * base, 3, 2, 1, rng, Init::TruncNormal002);
  img2_bn_ = BatchNormLayer(2 * base, cfg.bn_momentum);
  img3_ = Conv2dLayer(2 * base, 4 * base, 3, 2, 1, rng, Init::TruncNormal002);
  img3_bn_ = BatchNormLayer(4 * base, cfg.bn_momentum);
  feat_ = Conv2dLayer(fmap_channels, 4 * base, 1, 1, 0, rng, Init::TruncNormal002);
  fuse_ = Conv2dLayer(8 * base, 4 * base, 3, 1, 1, rng, Init::TruncNormal002);
  fuse_bn_ = BatchNormLayer(4 * base, cfg.bn_momentum);
  head_ = LinearLayer(4 * base, 1, rng, Init::TruncNormal002);
}

Tensor JointDiscriminator::forward(const Tensor& image, const Tensor& fmap, bool training) {
  TSGAN_CHECK(image.shape().rank == 4 && image.shape()[1] == 1, Data,
              "joint discriminator: expected [N,1,H,W] IR image, got " + image.shape().str());
  TSGAN_CHECK(fmap.shape().rank == 4, Data, "joint discriminator: feature map must be rank 4");
  Tensor a = leaky_relu(img1_.forward(image));
  a = leaky_relu(img2_bn_.forward(img2_.forward(a), training));
  a = leaky_relu(img3_bn_.forward(img3_.forward(a), training));
  TSGAN_CHECK(a.shape()[2] == fmap.shape()[2] && a.shape()[3] == fmap.shape()[3], Data,
              "joint discriminator: image branch grid " + a.shape().str() +
                  " does not match feature map " + fmap.shape().str());
  Tensor f = leaky_relu(feat_.forward(fmap));
  Tensor z = leaky_relu(fuse_bn_.forward(fuse_.forward(concat_channels(a, f)), training));
  return sigmoid(head_.forward(gap2d(z)));
}

ParamList JointDiscriminator::params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  img1_.collect(ps, prefix + ".img1");
  img2_.collect(ps, prefix + ".img2");
  img2_bn_.collect(ps, bs, prefix + ".img2_bn");
  img3_.collect(ps, prefix + ".img3");
  img3_bn_.collect(ps, bs, prefix + ".img3_bn");
  feat_.collect(ps, prefix + ".feat");
  fuse_.collect(ps, prefix + ".fuse");
  fuse_bn_.collect(ps, bs, prefix + ".fuse_bn");
  head_.collect(ps, prefix + ".head");
  return ps;
}

BufferList JointDiscriminator::buffers(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  img2_bn_.collect(ps, bs, prefix + ".img2_bn");
  img3_bn_.collect(ps, bs, prefix + ".img3_bn");
  fuse_bn_.collect(ps, bs, prefix + ".fuse_bn");
  return bs;
}

OrdinaryDiscriminator::OrdinaryDiscriminator(int in_channels, const TrainConfig& cfg, Rng& rng) {
  const int base = cfg.disc_base_width;
  c1_ = Conv2dLayer(in_channels, base, 3, 2, 1, rng, Init::TruncNormal002);
  c2_ = Conv2dLayer(base, 2 * base, 3, 2, 1, rng, Init::TruncNormal002);
  b2_ = BatchNormLayer(2 * base, cfg.bn_momentum);
  c3_ = Conv2dLayer(2 * base, 4 * base, 3, 2, 1, rng, Init::TruncNormal002);
  b3_ = BatchNormLayer(4 * base, cfg.bn_momentum);
  c4_ = Conv2dLayer(4 * base, 4 * base, 3, 1, 1, rng, Init::TruncNormal002);
  b4_ = BatchNormLayer(4 * base, cfg.bn_momentum);
  head_ = LinearLayer(4 * base, 1, rng, Init::TruncNormal002);
}

Tensor OrdinaryDiscriminator::forward(const Tensor& image, bool training) {
  TSGAN_CHECK(image.shape().rank == 4, Data, "discriminator: image must be rank 4");
  Tensor y = leaky_relu(c1_.forward(image));
  y = leaky_relu(b2_.forward(c2_.forward(y), training));
  y = leaky_relu(b3_.forward(c3_.forward(y), training));
  y = leaky_relu(b4_.forward(c4_.forward(y), training));
  return sigmoid(head_.forward(gap2d(y)));
}

ParamList OrdinaryDiscriminator::params(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  c1_.collect(ps, prefix + ".c1");
  c2_.collect(ps, prefix + ".c2");
  b2_.collect(ps, bs, prefix + ".b2");
  c3_.collect(ps, prefix + ".c3");
  b3_.collect(ps, bs, prefix + ".b3");
  c4_.collect(ps, prefix + ".c4");
  b4_.collect(ps, bs, prefix + ".b4");
  head_.collect(ps, prefix + ".head");
  return ps;
}

BufferList OrdinaryDiscriminator::buffers(const std::string& prefix) {
  ParamList ps;
  BufferList bs;
  b2_.collect(ps, bs, prefix + ".b2");
  b3_.collect(ps, bs, prefix + ".b3");
  b4_.collect(ps, bs, prefix + ".b4");
  return bs;
}

}  // namespace tsgan
