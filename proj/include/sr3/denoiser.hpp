#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sr3/diffusion.hpp"
#include "sr3/rng.hpp"
#include "sr3/tensor.hpp"

namespace sr3 {

struct DenoiserConfig {
  int base_channels = 64;
  std::vector<int> channel_multipliers{1, 2, 4, 8, 16};
  int res_blocks_per_level = 1;
  /// Spatial sizes (feature-map side length) that get a self-attention block.
  std::set<int> attention_resolutions;
  double dropout_p = 0.0;
  int groups = 16;
  int gamma_embed_dim = 64;
  int in_channels = 6;
  int out_channels = 3;
  /// Side length of the square images the network is built for. Decides
  /// which levels carry attention.
  int image_size = 512;
  double norm_eps = 1e-5;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  /// Feature-map sizes produced by the level structure, largest first.
  std::vector<int> level_resolutions() const;
  /// Throws ConfigError describing the first violated invariant.
  void validate() const;
};

/// Sinusoidal features of sqrt(gamma): for k < dim/2 with frequency
/// f_k = exp(-ln(10000) k / (dim/2)), entries are sin(1000 sqrt(gamma) f_k)
/// followed by the matching cosines.
std::vector<double> gamma_embedding(double gamma, int dim);

/// Scale applied to sqrt(gamma) before the sinusoidal features.
inline constexpr double kGammaEmbeddingScale = 1000.0;

/// Conditional U-Net f(x, y_t, gamma) predicting the noise in y_t.
///
/// The input is the channel concatenation [x_cond, y_t]. Encoder levels hold
/// residual blocks (optionally followed by attention) and 2x average-pool
/// downsampling; the decoder mirrors them with skip concatenation and
/// nearest-neighbour upsampling plus a 3x3 convolution. Every residual block
/// receives a FiLM scale/shift derived from the embedded noise level.
template <typename T>
class UNet : public NoisePredictor<T> {
 public:
  UNet(DenoiserConfig config, Rng& rng);

  Tensor<T> predict_eps(const Tensor<T>& x_cond, const Tensor<T>& y_t,
                        std::span<const double> gammas) override;

  const DenoiserConfig& config() const { return config_; }
  NamedTensors<T>& parameters() { return params_; }
  const NamedTensors<T>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Copies values by name; names and shapes must match exactly.
  void load_parameters(const NamedTensors<T>& values);
  void zero_grad();

  /// Dropout is active only in training mode; draws come from `dropout_rng`,
  /// which must outlive the training phase.
  void train(Rng& dropout_rng);
  void eval();
  bool training() const { return dropout_rng_ != nullptr; }

  /// Spatial sizes at which attention blocks were instantiated, one entry per
  /// block (encoder, bottleneck, decoder order).
  std::vector<int> attention_sites() const;

  /// Test hook: zero the skip tensor with the given push index before it is
  /// concatenated in the decoder.
  void ablate_skip(std::optional<std::size_t> index) { ablated_skip_ = index; }
  std::size_t skip_count() const { return skip_channels_.size(); }

 private:
  struct ResBlock {
    int in_channels = 0, out_channels = 0;
    Tensor<T> norm1_gain, norm1_bias, conv1_w, conv1_b;
    Tensor<T> film_w, film_b;
    Tensor<T> norm2_gain, norm2_bias, conv2_w, conv2_b;
    Tensor<T> skip_w, skip_b;  // only when channels change
  };
  struct AttnBlock {
    int resolution = 0;
    Tensor<T> norm_gain, norm_bias;
    Tensor<T> wq, wk, wv, wo;  // wo starts at zero: the block is the identity at init
  };
  struct Stage {
    ResBlock res;
    std::optional<AttnBlock> attn;
  };
  struct Level {
    std::vector<Stage> stages;
    Tensor<T> up_w, up_b;  // decoder levels above the lowest
  };

  Tensor<T>& add_param(const std::string& name, Shape shape);
  Tensor<T> kaiming(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor<T> normal(const std::string& name, Shape shape, double stddev);
  Tensor<T> zeros(const std::string& name, Shape shape);
  Tensor<T> ones(const std::string& name, Shape shape);
  ResBlock make_res(const std::string& prefix, int in_ch, int out_ch);
  AttnBlock make_attn(const std::string& prefix, int channels, int resolution);

  Tensor<T> run_res(const ResBlock& block, const Tensor<T>& x, const Tensor<T>& cond);
  Tensor<T> run_stage(const Stage& stage, const Tensor<T>& x, const Tensor<T>& cond);
  Tensor<T> run_attn(const AttnBlock& block, const Tensor<T>& x);

  DenoiserConfig config_;
  Rng* init_rng_ = nullptr;
  NamedTensors<T> params_;

  Tensor<T> embed_w1_, embed_b1_, embed_w2_, embed_b2_;
  Tensor<T> in_w_, in_b_;
  std::vector<Level> encoder_;
  Stage mid_first_;
  std::optional<AttnBlock> mid_attn_;
  Stage mid_second_;
  std::vector<Level> decoder_;  // lowest resolution first
  Tensor<T> out_norm_gain_, out_norm_bias_, out_w_, out_b_;

  std::vector<int> skip_channels_;
  Rng* dropout_rng_ = nullptr;
  std::optional<std::size_t> ablated_skip_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace sr3
