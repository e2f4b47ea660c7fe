#include "wm/vae/vae.hpp"

#include <cmath>
#include <sstream>

#include "wm/core/io.hpp"
#include "wm/core/kernels.hpp"
#include "wm/core/ops.hpp"

namespace wm::vae {

namespace k = core::kernels;
using core::Parameter;
using core::Tape;
using core::Var;

namespace {

constexpr std::size_t kEncKernel = 4;
constexpr std::size_t kStride = 2;

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

Parameter init_param(std::string name, core::Shape shape, double bound, const core::RngStream& root) {
  Array a(std::move(shape));
  if (bound > 0) {
    core::RngStream rng = root.split(name);
    for (auto& v : a.storage()) v = rng.uniform(-bound, bound);
  }
  return Parameter(std::move(name), std::move(a));
}

void relu_inplace(Array& a) {
  for (auto& v : a.storage()) v = v > 0 ? v : 0.0;
}

// Matches ops::add's broadcast of a bias row.
void add_bias(Array& a, const Array& b) {
  const std::size_t bs = b.size();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i % bs];
}

}  // namespace

std::vector<std::size_t> derive_decoder_kernels(std::size_t target, std::size_t layers) {
  if (layers == 0) throw std::invalid_argument("decoder needs at least one layer");
  // Walk back from the output side: each stride-2 layer maps t_prev to
  // 2 (t_prev - 1) + k, so pick k in {6, 5} with matching parity.
  std::vector<std::size_t> kernels(layers);
  std::size_t t = target;
  for (std::size_t i = layers - 1; i > 0; --i) {
    const std::size_t kk = (t - 6) % 2 == 0 ? 6 : 5;
    if (t < kk + 2) throw std::invalid_argument("frame side " + std::to_string(target) + " too small for " +
                                                std::to_string(layers) + " decoder layers");
    kernels[i] = kk;
    t = (t - kk) / kStride + 1;
  }
  kernels[0] = t;  // the first layer expands the 1x1 map to t x t
  return kernels;
}

void VaeConfig::resolve() {
  if (n_z < 1) throw std::invalid_argument("VaeConfig: n_z must be >= 1");
  if (height != width) throw std::invalid_argument("VaeConfig: frames must be square");
  if (encoder_channels.empty()) throw std::invalid_argument("VaeConfig: encoder needs at least one layer");
  if (encoder_out_side() < 1)
    throw std::invalid_argument("VaeConfig: encoder output spatial size < 1 for " + std::to_string(height) + "x" +
                                std::to_string(width) + " with " + std::to_string(encoder_channels.size()) +
                                " layers");
  if (decoder_channels.empty()) {
    decoder_channels.assign(encoder_channels.rbegin() + 1, encoder_channels.rend());
    decoder_channels.push_back(3);
  }
  if (decoder_channels.back() != 3) throw std::invalid_argument("VaeConfig: decoder must end with 3 channels");
  if (decoder_kernels.empty()) decoder_kernels = derive_decoder_kernels(height, decoder_channels.size());
  if (decoder_kernels.size() != decoder_channels.size())
    throw std::invalid_argument("VaeConfig: decoder kernels and channels differ in length");
  std::size_t side = 1;
  for (std::size_t kk : decoder_kernels) side = k::deconv_out_size(side, kk, kStride);
  if (side != height)
    throw std::invalid_argument("VaeConfig: decoder produces side " + std::to_string(side) + ", expected " +
                                std::to_string(height));
  if (!(beta >= 0)) throw std::invalid_argument("VaeConfig: beta must be >= 0");
}

std::size_t VaeConfig::encoder_out_side() const {
  std::size_t side = height;
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
    side = k::conv_out_size(side, kEncKernel, kStride);
    if (side == 0) return 0;
  }
  return side;
}

std::size_t VaeConfig::encoder_flat_size() const {
  const std::size_t s = encoder_out_side();
  return encoder_channels.back() * s * s;
}

VaeLoss vae_loss(std::span<const double> frame, std::span<const double> recon, std::span<const double> mu,
                 std::span<const double> sigma) {
  if (frame.size() != recon.size()) throw core::ShapeError("vae_loss: frame and reconstruction sizes differ");
  if (mu.size() != sigma.size()) throw core::ShapeError("vae_loss: mu and sigma sizes differ");
  VaeLoss l;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double d = frame[i] - recon[i];
    l.recon_l2 += d * d;
  }
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double var = sigma[i] * sigma[i];
    l.kl += -0.5 * (1.0 + std::log(var) - mu[i] * mu[i] - var);
  }
  return l;
}

Array frames_to_array(const std::vector<const envs::Observation*>& frames) {
  if (frames.empty()) throw std::invalid_argument("frames_to_array: no frames");
  const std::size_t h = frames[0]->height, w = frames[0]->width, per = 3 * h * w;
  Array x({frames.size(), 3, h, w});
  for (std::size_t n = 0; n < frames.size(); ++n) {
    if (frames[n]->height != h || frames[n]->width != w) throw core::ShapeError("frames_to_array: mixed frame sizes");
    frames[n]->to_planar(x.data() + n * per);
  }
  return x;
}

Vae::Vae(VaeConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.resolve();
  const core::RngStream root(seed, "vae.init");
  std::size_t in_c = 3;
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const std::size_t out_c = config_.encoder_channels[i];
    const double fan_in = static_cast<double>(in_c * kEncKernel * kEncKernel);
    const std::string p = "enc.conv" + std::to_string(i);
    enc_w_.push_back(init_param(p + ".w", {out_c, in_c, kEncKernel, kEncKernel}, std::sqrt(6.0 / fan_in), root));
    enc_b_.push_back(init_param(p + ".b", {out_c}, 0, root));
    in_c = out_c;
  }
  const std::size_t flat = config_.encoder_flat_size(), nz = config_.n_z;
  mu_w_ = init_param("enc.mu.w", {flat, nz}, std::sqrt(3.0 / static_cast<double>(flat)), root);
  mu_b_ = init_param("enc.mu.b", {nz}, 0, root);
  lv_w_ = init_param("enc.logvar.w", {flat, nz}, std::sqrt(3.0 / static_cast<double>(flat)), root);
  lv_b_ = init_param("enc.logvar.b", {nz}, 0, root);
  dense_w_ = init_param("dec.dense.w", {nz, flat}, std::sqrt(3.0 / static_cast<double>(nz)), root);
  dense_b_ = init_param("dec.dense.b", {flat}, 0, root);
  in_c = flat;
  for (std::size_t i = 0; i < config_.decoder_channels.size(); ++i) {
    const std::size_t out_c = config_.decoder_channels[i], kk = config_.decoder_kernels[i];
    // Each output pixel of a stride-2 transposed conv sees about in_c * (k/2)^2 inputs.
    const double fan_in = static_cast<double>(in_c * kk * kk) / static_cast<double>(kStride * kStride);
    const bool last = i + 1 == config_.decoder_channels.size();
    const std::string p = "dec.deconv" + std::to_string(i);
    dec_w_.push_back(init_param(p + ".w", {in_c, out_c, kk, kk}, std::sqrt((last ? 3.0 : 6.0) / fan_in), root));
    dec_b_.push_back(init_param(p + ".b", {out_c}, 0, root));
    in_c = out_c;
  }
}

std::vector<Parameter*> Vae::parameters() {
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < enc_w_.size(); ++i) ps.insert(ps.end(), {&enc_w_[i], &enc_b_[i]});
  ps.insert(ps.end(), {&mu_w_, &mu_b_, &lv_w_, &lv_b_, &dense_w_, &dense_b_});
  for (std::size_t i = 0; i < dec_w_.size(); ++i) ps.insert(ps.end(), {&dec_w_[i], &dec_b_[i]});
  return ps;
}

std::vector<const Parameter*> Vae::parameters() const {
  auto ps = const_cast<Vae*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t Vae::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void Vae::check_frame_shape(const core::Shape& s) const {
  const core::Shape want{s.empty() ? 0 : s[0], 3, config_.height, config_.width};
  if (s.size() != 4 || s != want) core::throw_shape_mismatch("vae encode (input vs expected)", s, want);
}

Vae::Encoded Vae::encode(Tape& tape, const Var& x) {
  namespace ops = core::ops;
  check_frame_shape(x.shape());
  const std::size_t n = x.shape()[0];
  Var h = x;
  for (std::size_t i = 0; i < enc_w_.size(); ++i)
    h = ops::relu(ops::conv2d(h, tape.parameter(enc_w_[i]), tape.parameter(enc_b_[i]), kStride));
  Var flat = ops::reshape(h, {n, config_.encoder_flat_size()});
  Var mu = ops::add(ops::matmul(flat, tape.parameter(mu_w_)), tape.parameter(mu_b_));
  Var lv = ops::add(ops::matmul(flat, tape.parameter(lv_w_)), tape.parameter(lv_b_));
  return {mu, lv};
}

Var Vae::decode(Tape& tape, const Var& z) {
  namespace ops = core::ops;
  if (z.shape().size() != 2 || z.shape()[1] != config_.n_z)
    core::throw_shape_mismatch("vae decode (z vs expected)", z.shape(), {z.shape().empty() ? 0 : z.shape()[0], config_.n_z});
  const std::size_t n = z.shape()[0];
  Var h = ops::add(ops::matmul(z, tape.parameter(dense_w_)), tape.parameter(dense_b_));
  h = ops::reshape(h, {n, config_.encoder_flat_size(), 1, 1});
  for (std::size_t i = 0; i < dec_w_.size(); ++i) {
    h = ops::deconv2d(h, tape.parameter(dec_w_[i]), tape.parameter(dec_b_[i]), kStride);
    h = i + 1 == dec_w_.size() ? ops::sigmoid(h) : ops::relu(h);
  }
  return h;
}

void Vae::encode_batch(const Array& x, Array& mu, Array& sigma) const {
  check_frame_shape(x.shape());
  const std::size_t n = x.shape()[0];
  Array h = x;
  for (std::size_t i = 0; i < enc_w_.size(); ++i) {
    h = k::conv2d(h, enc_w_[i].value, enc_b_[i].value, kStride);
    relu_inplace(h);
  }
  h = std::move(h).reshaped({n, config_.encoder_flat_size()});
  mu = k::matmul(h, mu_w_.value);
  add_bias(mu, mu_b_.value);
  sigma = k::matmul(h, lv_w_.value);
  add_bias(sigma, lv_b_.value);
  for (auto& v : sigma.storage()) v = std::exp(0.5 * v);
}

Array Vae::decode_batch(const Array& z) const {
  if (z.rank() != 2 || z.dim(1) != config_.n_z)
    core::throw_shape_mismatch("vae decode (z vs expected)", z.shape(), {z.rank() ? z.dim(0) : 0, config_.n_z});
  const std::size_t n = z.dim(0);
  Array h = k::matmul(z, dense_w_.value);
  add_bias(h, dense_b_.value);
  h = std::move(h).reshaped({n, config_.encoder_flat_size(), 1, 1});
  for (std::size_t i = 0; i < dec_w_.size(); ++i) {
    h = k::deconv2d(h, dec_w_[i].value, dec_b_[i].value, kStride);
    if (i + 1 == dec_w_.size())
      for (auto& v : h.storage()) v = k::sigmoid(v);
    else
      relu_inplace(h);
  }
  return h;
}

LatentCode Vae::encode(const envs::Observation& frame, core::RngStream& rng) const {
  Array mu, sigma;
  encode_batch(frames_to_array({&frame}), mu, sigma);
  LatentCode c;
  c.mu = mu.storage();
  c.sigma = sigma.storage();
  c.z.resize(config_.n_z);
  for (std::size_t i = 0; i < config_.n_z; ++i) c.z[i] = c.mu[i] + c.sigma[i] * rng.normal();
  return c;
}

Array Vae::decode(std::span<const double> z) const {
  if (z.size() != config_.n_z) core::throw_shape_mismatch("vae decode (z vs expected)", {z.size()}, {config_.n_z});
  Array out = decode_batch(Array({1, config_.n_z}, std::vector<double>(z.begin(), z.end())));
  return std::move(out).reshaped({3, config_.height, config_.width});
}

envs::Observation Vae::decode_observation(std::span<const double> z) const {
  const Array planar = decode(z);
  const std::size_t plane = config_.height * config_.width;
  envs::Observation obs(config_.height, config_.width);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      obs.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(planar[c * plane + i] * 255.0));
  return obs;
}

void write_config(core::Checkpoint& ckpt, const VaeConfig& c) {
  ckpt.meta["model"] = "vae";
  ckpt.meta["n_z"] = std::to_string(c.n_z);
  ckpt.meta["height"] = std::to_string(c.height);
  ckpt.meta["width"] = std::to_string(c.width);
  ckpt.meta["encoder_channels"] = join(c.encoder_channels);
  ckpt.meta["decoder_channels"] = join(c.decoder_channels);
  ckpt.meta["decoder_kernels"] = join(c.decoder_kernels);
  std::ostringstream b;
  b.precision(17);
  b << c.beta;
  ckpt.meta["beta"] = b.str();
}

VaeConfig read_config(const core::Checkpoint& ckpt) {
  if (ckpt.meta_value("model") != "vae") throw core::FormatError("checkpoint is not a VAE");
  VaeConfig c;
  c.n_z = std::stoul(ckpt.meta_value("n_z"));
  c.height = std::stoul(ckpt.meta_value("height"));
  c.width = std::stoul(ckpt.meta_value("width"));
  c.encoder_channels = split_sizes(ckpt.meta_value("encoder_channels"));
  c.decoder_channels = split_sizes(ckpt.meta_value("decoder_channels"));
  c.decoder_kernels = split_sizes(ckpt.meta_value("decoder_kernels"));
  c.beta = std::stod(ckpt.meta_value("beta"));
  return c;
}

core::Checkpoint Vae::to_checkpoint() {
  core::Checkpoint ckpt;
  write_config(ckpt, config_);
  auto ps = parameters();
  core::round_to_f32(ps);
  core::store_parameters(ckpt, ps);
  return ckpt;
}

Vae Vae::from_checkpoint(const core::Checkpoint& ckpt) {
  Vae v(read_config(ckpt), 0);
  core::restore_parameters(ckpt, v.parameters());
  return v;
}

void Vae::save(const std::filesystem::path& path) { core::save_checkpoint(path, to_checkpoint()); }

Vae Vae::load(const std::filesystem::path& path) { return from_checkpoint(core::load_checkpoint(path)); }

}  // namespace wm::vae
