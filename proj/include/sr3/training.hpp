#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sr3/dataset.hpp"
#include "sr3/denoiser.hpp"
#include "sr3/schedule.hpp"

namespace sr3 {

struct TrainConfig {
  int batch_size = 8;
  double base_lr = 3e-6;
  std::vector<long> lr_milestones;
  double lr_factor = 0.5;
  long total_iters = 1'000'000;
  long val_every = 10'000;
  bool use_ema = false;
  double ema_decay = 0.9999;
  bool use_clip = false;
  double clip_max_norm = 1.0;
  int p_norm = 2;
  std::uint64_t seed = 0;
  /// Reverse steps used by validation sampling; 0 means the full schedule.
  int val_steps = 0;
  /// Validation images sampled at each validation point.
  int val_count = 4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// Everything needed to continue or reproduce a run. `params` shares storage
/// with the model being trained.
template <typename T>
struct TrainState {
  long step = 0;
  NamedTensors<T> params;
  NamedTensors<T> ema_params;
  NamedTensors<T> adam_m;
  NamedTensors<T> adam_v;
  NoiseSchedule schedule;
  Rng noise_rng;    // gamma and eps draws
  Rng dropout_rng;
  Rng data_rng;     // batch order and augmentation
  /// Configuration echo stored in the checkpoint header, in insertion order.
  std::vector<std::pair<std::string, std::string>> header;

  /// Fresh state around the given parameters: EMA copy, zeroed moments.
  static TrainState initial(const NamedTensors<T>& params, NoiseSchedule schedule,
                            std::uint64_t seed);
};

/// Bias-corrected Adam on state.params, then step += 1. Throws NumericalError
/// naming the first gradient tensor with a NaN/Inf.
template <typename T>
void adam_step(TrainState<T>& state, const NamedTensors<T>& grads, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Global L2 norm over all tensors.
template <typename T>
double global_norm(const NamedTensors<T>& tensors);

/// Rescales every gradient by max_norm/norm when the global norm exceeds
/// max_norm. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(NamedTensors<T>& grads, double max_norm);

/// ema <- decay * ema + (1 - decay) * params.
template <typename T>
void ema_update(NamedTensors<T>& ema, const NamedTensors<T>& params, double decay);

/// base_lr * lr_factor^(number of milestones <= step).
double lr_at(long step, const TrainConfig& cfg);

/// Gradient buffers of the parameters, copied into standalone tensors.
template <typename T>
NamedTensors<T> collect_grads(const NamedTensors<T>& params);

struct MetricsRow {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool validated = false;
  double val_psnr = 0.0;
  double val_ssim = 0.0;

  /// step<TAB>loss<TAB>lr<TAB>grad_norm<TAB>val_psnr<TAB>val_ssim; empty
  /// validation fields are written as "-".
  std::string to_tsv() const;
};

/// Destination for checkpoints and the metrics log. An empty directory keeps
/// everything in memory (nothing is written).
class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path dir = {});

  const std::filesystem::path& dir() const { return dir_; }
  void append(const MetricsRow& row);
  const std::vector<MetricsRow>& log() const { return log_; }
  /// Writes <dir>/<name> and counts it.
  template <typename T>
  void save(const TrainState<T>& state, const std::string& name);
  int checkpoints_written() const { return written_; }
  std::vector<std::string> saved_names() const { return names_; }

 private:
  std::filesystem::path dir_;
  std::ofstream log_file_;
  std::vector<MetricsRow> log_;
  std::vector<std::string> names_;
  int written_ = 0;
};

struct ValidationScore {
  double psnr;
  double ssim;
};

/// Mean PSNR/SSIM of samples from `model` against the HR images of the
/// first `count` items, sampling with `schedule` from a fixed seed.
template <typename T>
ValidationScore validate(UNet<T>& model, const DatasetHandle& data, int count,
                         const NoiseSchedule& schedule, std::uint64_t seed);

/// Runs cfg.total_iters iterations of: draw batch, noise-prediction loss,
/// backward, optional clipping, Adam at lr_at(step), EMA update, zero grads.
/// Every cfg.val_every steps the EMA weights are validated and "last.ckpt"
/// (and "best.ckpt" on a new best PSNR) are written; a final "last.ckpt" is
/// written at the end. `validation` defaults to the training data.
///
/// With `resume`, the model, optimiser moments, EMA weights, generators and
/// step counter continue from that state up to cfg.total_iters.
template <typename T>
TrainState<T> train_loop(UNet<T>& model, const DatasetHandle& data, const NoiseSchedule& schedule,
                         const TrainConfig& cfg, CheckpointStore& sink,
                         const DatasetHandle* validation = nullptr,
                         std::vector<std::pair<std::string, std::string>> header = {},
                         const TrainState<T>* resume = nullptr);

}  // namespace sr3
