#include "sr3/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sr3/errors.hpp"
#include "sr3/ops.hpp"

namespace sr3 {

std::vector<int> DenoiserConfig::level_resolutions() const {
  std::vector<int> sizes;
  for (int i = 0; i < levels(); ++i) sizes.push_back(image_size >> i);
  return sizes;
}

void DenoiserConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (channel_multipliers.empty()) throw ConfigError("channel_multipliers must not be empty");
  for (int m : channel_multipliers) {
    if (m < 1) throw ConfigError("channel multipliers must be >= 1");
  }
  if (res_blocks_per_level < 1) throw ConfigError("res_blocks_per_level must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (base_channels % groups != 0) {
    throw ConfigError("base_channels " + std::to_string(base_channels) +
                      " is not divisible by groups " + std::to_string(groups));
  }
  const int widest = base_channels * *std::max_element(channel_multipliers.begin(),
                                                       channel_multipliers.end());
  if (widest % groups != 0) {
    throw ConfigError("base_channels * max(multipliers) = " + std::to_string(widest) +
                      " is not divisible by groups " + std::to_string(groups));
  }
  if (gamma_embed_dim < 2 || gamma_embed_dim % 2 != 0) {
    throw ConfigError("gamma_embed_dim must be a positive even number");
  }
  if (in_channels != 2 * out_channels) {
    throw ConfigError("in_channels must be twice out_channels (condition + noisy target)");
  }
  if (image_size < 1 || image_size % (1 << (levels() - 1)) != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by 2^" +
                      std::to_string(levels() - 1));
  }
  const auto produced = level_resolutions();
  for (int r : attention_resolutions) {
    if (std::find(produced.begin(), produced.end(), r) == produced.end()) {
      std::string sizes;
      for (int s : produced) sizes += (sizes.empty() ? "" : ",") + std::to_string(s);
      throw ConfigError("attention resolution " + std::to_string(r) +
                        " is not produced by the level structure (sizes " + sizes +
                        " for image_size " + std::to_string(image_size) + ")");
    }
  }
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
}

std::vector<double> gamma_embedding(double gamma, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw ShapeError("gamma_embedding: dim must be a positive even number, got " +
                     std::to_string(dim));
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ShapeError("gamma_embedding: gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  const int half = dim / 2;
  const double level = kGammaEmbeddingScale * std::sqrt(gamma);
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    out[static_cast<std::size_t>(k)] = std::sin(level * freq);
    out[static_cast<std::size_t>(k + half)] = std::cos(level * freq);
  }
  return out;
}

template <typename T>
Tensor<T>& UNet<T>::add_param(const std::string& name, Shape shape) {
  params_.push_back({name, Tensor<T>(std::move(shape), true)});
  return params_.back().tensor;
}

template <typename T>
Tensor<T> UNet<T>::normal(const std::string& name, Shape shape, double stddev) {
  auto& t = add_param(name, std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(stddev * init_rng_->gaussian());
  return t;
}

template <typename T>
Tensor<T> UNet<T>::kaiming(const std::string& name, Shape shape, std::size_t fan_in) {
  return normal(name, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

template <typename T>
Tensor<T> UNet<T>::zeros(const std::string& name, Shape shape) {
  return add_param(name, std::move(shape));
}

template <typename T>
Tensor<T> UNet<T>::ones(const std::string& name, Shape shape) {
  auto& t = add_param(name, std::move(shape));
  for (auto& v : t.data()) v = T(1);
  return t;
}

template <typename T>
typename UNet<T>::ResBlock UNet<T>::make_res(const std::string& prefix, int in_ch, int out_ch) {
  const auto ci = static_cast<std::size_t>(in_ch), co = static_cast<std::size_t>(out_ch);
  const auto cond = static_cast<std::size_t>(4 * config_.gamma_embed_dim);
  ResBlock b;
  b.in_channels = in_ch;
  b.out_channels = out_ch;
  b.norm1_gain = ones(prefix + ".norm1.gain", {ci});
  b.norm1_bias = zeros(prefix + ".norm1.bias", {ci});
  b.conv1_w = kaiming(prefix + ".conv1.weight", {co, ci, 3, 3}, ci * 9);
  b.conv1_b = zeros(prefix + ".conv1.bias", {co});
  b.film_w = zeros(prefix + ".film.weight", {2 * co, cond});
  b.film_b = zeros(prefix + ".film.bias", {2 * co});
  b.norm2_gain = ones(prefix + ".norm2.gain", {co});
  b.norm2_bias = zeros(prefix + ".norm2.bias", {co});
  b.conv2_w = zeros(prefix + ".conv2.weight", {co, co, 3, 3});
  b.conv2_b = zeros(prefix + ".conv2.bias", {co});
  if (in_ch != out_ch) {
    b.skip_w = kaiming(prefix + ".skip.weight", {co, ci, 1, 1}, ci);
    b.skip_b = zeros(prefix + ".skip.bias", {co});
  }
  return b;
}

template <typename T>
typename UNet<T>::AttnBlock UNet<T>::make_attn(const std::string& prefix, int channels,
                                               int resolution) {
  const auto c = static_cast<std::size_t>(channels);
  AttnBlock a;
  a.resolution = resolution;
  // Projections are linear (no activation follows), so fan-in scaling without the ReLU gain.
  const double stddev = 1.0 / std::sqrt(static_cast<double>(c));
  a.norm_gain = ones(prefix + ".norm.gain", {c});
  a.norm_bias = zeros(prefix + ".norm.bias", {c});
  a.wq = normal(prefix + ".wq", {c, c}, stddev);
  a.wk = normal(prefix + ".wk", {c, c}, stddev);
  a.wv = normal(prefix + ".wv", {c, c}, stddev);
  a.wo = zeros(prefix + ".wo", {c, c});
  return a;
}

template <typename T>
UNet<T>::UNet(DenoiserConfig config, Rng& rng) : config_(std::move(config)), init_rng_(&rng) {
  config_.validate();
  const int base = config_.base_channels;
  const auto embed = static_cast<std::size_t>(config_.gamma_embed_dim);
  const auto& attn = config_.attention_resolutions;
  const auto resolutions = config_.level_resolutions();

  embed_w1_ = kaiming("embed.fc1.weight", {4 * embed, embed}, embed);
  embed_b1_ = zeros("embed.fc1.bias", {4 * embed});
  embed_w2_ = kaiming("embed.fc2.weight", {4 * embed, 4 * embed}, 4 * embed);
  embed_b2_ = zeros("embed.fc2.bias", {4 * embed});

  const auto in_ch = static_cast<std::size_t>(config_.in_channels);
  in_w_ = kaiming("in.conv.weight", {static_cast<std::size_t>(base), in_ch, 3, 3}, in_ch * 9);
  in_b_ = zeros("in.conv.bias", {static_cast<std::size_t>(base)});

  int ch = base;
  skip_channels_.push_back(ch);
  for (int i = 0; i < config_.levels(); ++i) {
    const int out = base * config_.channel_multipliers[static_cast<std::size_t>(i)];
    const int res = resolutions[static_cast<std::size_t>(i)];
    Level level;
    for (int r = 0; r < config_.res_blocks_per_level; ++r) {
      const std::string prefix = "enc." + std::to_string(i) + "." + std::to_string(r);
      Stage stage{make_res(prefix + ".res", ch, out), std::nullopt};
      if (attn.contains(res)) stage.attn = make_attn(prefix + ".attn", out, res);
      level.stages.push_back(std::move(stage));
      ch = out;
      skip_channels_.push_back(ch);
    }
    if (i + 1 < config_.levels()) skip_channels_.push_back(ch);
    encoder_.push_back(std::move(level));
  }

  const int lowest = resolutions.back();
  mid_first_ = Stage{make_res("mid.res0", ch, ch), std::nullopt};
  if (attn.contains(lowest)) mid_attn_ = make_attn("mid.attn", ch, lowest);
  mid_second_ = Stage{make_res("mid.res1", ch, ch), std::nullopt};

  auto pending = skip_channels_;
  for (int i = config_.levels() - 1; i >= 0; --i) {
    const int out = base * config_.channel_multipliers[static_cast<std::size_t>(i)];
    const int res = resolutions[static_cast<std::size_t>(i)];
    Level level;
    for (int r = 0; r <= config_.res_blocks_per_level; ++r) {
      const std::string prefix = "dec." + std::to_string(i) + "." + std::to_string(r);
      const int skip = pending.back();
      pending.pop_back();
      Stage stage{make_res(prefix + ".res", ch + skip, out), std::nullopt};
      if (attn.contains(res)) stage.attn = make_attn(prefix + ".attn", out, res);
      level.stages.push_back(std::move(stage));
      ch = out;
    }
    if (i > 0) {
      const auto c = static_cast<std::size_t>(ch);
      const std::string prefix = "dec." + std::to_string(i) + ".up.conv";
      level.up_w = kaiming(prefix + ".weight", {c, c, 3, 3}, c * 9);
      level.up_b = zeros(prefix + ".bias", {c});
    }
    decoder_.push_back(std::move(level));
  }

  const auto c = static_cast<std::size_t>(ch);
  const auto out_ch = static_cast<std::size_t>(config_.out_channels);
  out_norm_gain_ = ones("out.norm.gain", {c});
  out_norm_bias_ = zeros("out.norm.bias", {c});
  out_w_ = zeros("out.conv.weight", {out_ch, c, 3, 3});
  out_b_ = zeros("out.conv.bias", {out_ch});
  init_rng_ = nullptr;
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

template <typename T>
void UNet<T>::load_parameters(const NamedTensors<T>& values) {
  if (values.size() != params_.size()) {
    throw ShapeError("load_parameters: expected " + std::to_string(params_.size()) +
                     " tensors, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = values[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw ShapeError("load_parameters: expected " + dst.name + shape_str(dst.tensor.shape()) +
                       ", got " + src.name + shape_str(src.tensor.shape()));
    }
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.tensor.data().begin());
  }
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void UNet<T>::train(Rng& dropout_rng) {
  dropout_rng_ = &dropout_rng;
}

template <typename T>
void UNet<T>::eval() {
  dropout_rng_ = nullptr;
}

template <typename T>
std::vector<int> UNet<T>::attention_sites() const {
  std::vector<int> sites;
  for (const auto& level : encoder_)
    for (const auto& s : level.stages)
      if (s.attn) sites.push_back(s.attn->resolution);
  if (mid_attn_) sites.push_back(mid_attn_->resolution);
  for (const auto& level : decoder_)
    for (const auto& s : level.stages)
      if (s.attn) sites.push_back(s.attn->resolution);
  return sites;
}

template <typename T>
Tensor<T> UNet<T>::run_res(const ResBlock& b, const Tensor<T>& x, const Tensor<T>& cond) {
  const int groups = config_.groups;
  const double eps = config_.norm_eps;
  auto h = ops::silu(ops::group_norm(x, groups, b.norm1_gain, b.norm1_bias, eps));
  h = ops::conv2d(h, b.conv1_w, b.conv1_b, 1, 1);
  const auto mod = ops::linear(cond, b.film_w, b.film_b);
  h = ops::silu(ops::film(ops::group_norm(h, groups, b.norm2_gain, b.norm2_bias, eps), mod));
  h = ops::conv2d(h, b.conv2_w, b.conv2_b, 1, 1);
  if (dropout_rng_ != nullptr) h = ops::dropout(h, config_.dropout_p, true, *dropout_rng_);
  const auto skip = b.skip_w.defined() ? ops::conv2d(x, b.skip_w, b.skip_b, 1, 0) : x;
  return ops::add(skip, h);
}

template <typename T>
Tensor<T> UNet<T>::run_stage(const Stage& stage, const Tensor<T>& x, const Tensor<T>& cond) {
  auto h = run_res(stage.res, x, cond);
  if (stage.attn) h = run_attn(*stage.attn, h);
  return h;
}

template <typename T>
Tensor<T> UNet<T>::run_attn(const AttnBlock& a, const Tensor<T>& x) {
  const auto normed = ops::group_norm(x, config_.groups, a.norm_gain, a.norm_bias, config_.norm_eps);
  return ops::add(x, ops::self_attention(normed, a.wq, a.wk, a.wv, a.wo));
}

template <typename T>
Tensor<T> UNet<T>::predict_eps(const Tensor<T>& x_cond, const Tensor<T>& y_t,
                               std::span<const double> gammas) {
  if (x_cond.shape() != y_t.shape()) {
    throw ShapeError("predict_eps: condition " + shape_str(x_cond.shape()) +
                     " and noisy target " + shape_str(y_t.shape()) + " differ");
  }
  if (y_t.rank() != 4 || y_t.dim(1) != static_cast<std::size_t>(config_.out_channels)) {
    throw ShapeError("predict_eps: expected [N," + std::to_string(config_.out_channels) +
                     ",H,W], got " + shape_str(y_t.shape()));
  }
  const std::size_t n = y_t.dim(0);
  const std::size_t divisor = std::size_t{1} << (config_.levels() - 1);
  if (y_t.dim(2) % divisor != 0 || y_t.dim(3) % divisor != 0) {
    throw ShapeError("predict_eps: spatial size " + shape_str(y_t.shape()) +
                     " is not divisible by " + std::to_string(divisor));
  }
  if (gammas.size() != n) {
    throw ShapeError("predict_eps: " + std::to_string(gammas.size()) + " noise levels for batch of " +
                     std::to_string(n));
  }

  const auto embed = static_cast<std::size_t>(config_.gamma_embed_dim);
  std::vector<T> features;
  features.reserve(n * embed);
  for (double g : gammas) {
    for (double v : gamma_embedding(g, config_.gamma_embed_dim)) features.push_back(static_cast<T>(v));
  }
  const Tensor<T> embedded({n, embed}, std::move(features));
  auto cond = ops::linear(embedded, embed_w1_, embed_b1_);
  cond = ops::linear(ops::silu(cond), embed_w2_, embed_b2_);
  cond = ops::silu(cond);

  std::vector<Tensor<T>> skips;
  auto h = ops::conv2d(ops::concat_channels(x_cond, y_t), in_w_, in_b_, 1, 1);
  skips.push_back(h);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    for (const auto& stage : encoder_[i].stages) {
      h = run_stage(stage, h, cond);
      skips.push_back(h);
    }
    if (i + 1 < encoder_.size()) {
      h = ops::resample2(h, ops::Resample::Down);
      skips.push_back(h);
    }
  }

  h = run_stage(mid_first_, h, cond);
  if (mid_attn_) h = run_attn(*mid_attn_, h);
  h = run_stage(mid_second_, h, cond);

  for (const auto& level : decoder_) {
    for (const auto& stage : level.stages) {
      auto skip = skips.back();
      if (ablated_skip_ && *ablated_skip_ == skips.size() - 1) {
        skip = Tensor<T>::zeros(skip.shape());
      }
      skips.pop_back();
      h = run_stage(stage, ops::concat_channels(h, skip), cond);
    }
    if (level.up_w.defined()) {
      h = ops::conv2d(ops::resample2(h, ops::Resample::Up), level.up_w, level.up_b, 1, 1);
    }
  }

  h = ops::silu(ops::group_norm(h, config_.groups, out_norm_gain_, out_norm_bias_, config_.norm_eps));
  return ops::conv2d(h, out_w_, out_b_, 1, 1);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace sr3
