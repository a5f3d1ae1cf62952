#include "sr3/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>

#include "sr3/checkpoint.hpp"
#include "sr3/errors.hpp"
#include "sr3/metrics.hpp"

namespace sr3 {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("training config: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (!(lr_factor > 0.0 && lr_factor <= 1.0)) fail("lr_factor must be in (0, 1]");
  if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end())) fail("lr_milestones must be ascending");
  if (total_iters < 0) fail("total_iters must be >= 0");
  if (val_every < 1) fail("val_every must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must be in [0, 1)");
  if (!(clip_max_norm > 0.0)) fail("clip_max_norm must be positive");
  if (p_norm != 1 && p_norm != 2) fail("p_norm must be 1 or 2");
  if (val_steps < 0) fail("val_steps must be >= 0");
  if (val_count < 0) fail("val_count must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

template <typename T>
TrainState<T> TrainState<T>::initial(const NamedTensors<T>& params, NoiseSchedule schedule,
                                     std::uint64_t seed) {
  Rng root(seed);
  Rng noise = root.fork();
  Rng dropout = root.fork();
  Rng data = root.fork();
  NamedTensors<T> m, v;
  for (const auto& p : params) {
    m.push_back({p.name, Tensor<T>::zeros(p.tensor.shape())});
    v.push_back({p.name, Tensor<T>::zeros(p.tensor.shape())});
  }
  return TrainState{0, params, clone_all(params), std::move(m), std::move(v), std::move(schedule),
                    noise, dropout, data, {}};
}

namespace {

template <typename T>
void check_finite(const NamedTensors<T>& set, const char* what) {
  for (const auto& item : set) {
    for (T v : item.tensor.data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericalError(std::string("non-finite ") + what + " in '" + item.name + "'");
      }
    }
  }
}

template <typename T>
void require_aligned(const NamedTensors<T>& a, const NamedTensors<T>& b, const char* op) {
  if (a.size() != b.size()) throw ShapeError(std::string(op) + ": tensor count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) {
      throw ShapeError(std::string(op) + ": '" + a[i].name + "' " + shape_str(a[i].tensor.shape()) +
                       " does not match '" + b[i].name + "' " + shape_str(b[i].tensor.shape()));
    }
  }
}

}  // namespace

template <typename T>
void adam_step(TrainState<T>& state, const NamedTensors<T>& grads, double lr, double beta1,
               double beta2, double eps) {
  require_aligned(state.params, grads, "adam_step");
  check_finite(grads, "gradient");
  const long t = state.step + 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = state.params[i].tensor.data();
    auto m = state.adam_m[i].tensor.data();
    auto v = state.adam_v[i].tensor.data();
    const auto g = grads[i].tensor.data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = beta1 * m[k] + (1.0 - beta1) * gk;
      const double vk = beta2 * v[k] + (1.0 - beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
    }
  }
  state.step = t;
}

template <typename T>
double global_norm(const NamedTensors<T>& tensors) {
  double sq = 0.0;
  for (const auto& item : tensors) {
    for (T v : item.tensor.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(NamedTensors<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& item : grads) {
      for (T& v : item.tensor.data()) v = static_cast<T>(v * factor);
    }
  }
  return norm;
}

template <typename T>
void ema_update(NamedTensors<T>& ema, const NamedTensors<T>& params, double decay) {
  require_aligned(ema, params, "ema_update");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto e = ema[i].tensor.data();
    const auto p = params[i].tensor.data();
    for (std::size_t k = 0; k < e.size(); ++k) {
      e[k] = static_cast<T>(decay * e[k] + (1.0 - decay) * p[k]);
    }
  }
}

double lr_at(long step, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (long milestone : cfg.lr_milestones) {
    if (milestone <= step) lr *= cfg.lr_factor;
  }
  return lr;
}

template <typename T>
NamedTensors<T> collect_grads(const NamedTensors<T>& params) {
  NamedTensors<T> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Tensor<T> g(p.tensor.shape());
    if (p.tensor.has_grad()) {
      const auto src = p.tensor.grad();
      std::copy(src.begin(), src.end(), g.data().begin());
    }
    out.push_back({p.name, g});
  }
  return out;
}

std::string MetricsRow::to_tsv() const {
  char buf[256];
  if (validated) {
    std::snprintf(buf, sizeof buf, "%ld\t%.9g\t%.9g\t%.9g\t%s\t%s", step, loss, lr, grad_norm,
                  format_metric(val_psnr).c_str(), format_metric(val_ssim).c_str());
  } else {
    std::snprintf(buf, sizeof buf, "%ld\t%.9g\t%.9g\t%.9g\t-\t-", step, loss, lr, grad_norm);
  }
  return buf;
}

CheckpointStore::CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  const auto path = dir_ / "metrics.tsv";
  log_file_.open(path, std::ios::binary | std::ios::trunc);
  if (!log_file_) throw IoError("cannot write " + path.string());
  log_file_ << "step\tloss\tlr\tgrad_norm\tval_psnr\tval_ssim\n";
}

void CheckpointStore::append(const MetricsRow& row) {
  log_.push_back(row);
  if (log_file_.is_open()) log_file_ << row.to_tsv() << '\n' << std::flush;
}

template <typename T>
void CheckpointStore::save(const TrainState<T>& state, const std::string& name) {
  if (!dir_.empty()) save_checkpoint(state, dir_ / name);
  names_.push_back(name);
  ++written_;
}

template <typename T>
ValidationScore validate(UNet<T>& model, const DatasetHandle& data, int count,
                         const NoiseSchedule& schedule, std::uint64_t seed) {
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), data.size());
  if (n == 0) throw ShapeError("validate: no validation items");
  std::vector<const Image*> cond;
  for (std::size_t i = 0; i < n; ++i) cond.push_back(&data.items[i].pair.lr_up);
  Rng rng(seed);
  const auto out = sample(model, images_to_tensor<T>(cond), schedule, rng);
  double psnr_total = 0.0, ssim_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Image sr = tensor_to_image(out, i);
    psnr_total += psnr(sr, data.items[i].pair.hr);
    ssim_total += ssim(sr, data.items[i].pair.hr);
  }
  return {psnr_total / static_cast<double>(n), ssim_total / static_cast<double>(n)};
}

template <typename T>
TrainState<T> train_loop(UNet<T>& model, const DatasetHandle& data, const NoiseSchedule& schedule,
                         const TrainConfig& cfg, CheckpointStore& sink,
                         const DatasetHandle* validation,
                         std::vector<std::pair<std::string, std::string>> header,
                         const TrainState<T>* resume) {
  cfg.validate();
  if (data.size() == 0) throw ShapeError("train_loop: empty training set");
  TrainState<T> state = TrainState<T>::initial(model.parameters(), schedule, cfg.seed);
  if (resume) {
    if (!(resume->schedule == schedule)) throw ConfigError("resume: checkpoint schedule differs");
    model.load_parameters(resume->params);
    state.step = resume->step;
    state.ema_params = clone_all(resume->ema_params);
    state.adam_m = clone_all(resume->adam_m);
    state.adam_v = clone_all(resume->adam_v);
    state.noise_rng = resume->noise_rng;
    state.dropout_rng = resume->dropout_rng;
    state.data_rng = resume->data_rng;
  }
  state.header = std::move(header);

  const DatasetHandle& val_data = validation ? *validation : data;
  const NoiseSchedule val_schedule =
      cfg.val_steps > 0 && cfg.val_steps < schedule.steps() ? respace(schedule, cfg.val_steps) : schedule;
  std::optional<UNet<T>> val_model;
  double best_psnr = -std::numeric_limits<double>::infinity();

  BatchSampler sampler(data.size(), cfg.seed);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  const double decay = cfg.use_ema ? cfg.ema_decay : 0.0;

  while (state.step < cfg.total_iters) {
    const long step = state.step;
    const auto batch = make_batch<T>(data, sampler.batch(step, batch_size), &state.data_rng);
    model.train(state.dropout_rng);
    auto loss = training_loss(model, batch, schedule, state.noise_rng, cfg.p_norm);
    loss.backward();
    auto grads = collect_grads(model.parameters());
    const double norm = cfg.use_clip ? clip_grad_norm(grads, cfg.clip_max_norm) : global_norm(grads);
    const double lr = lr_at(step, cfg);
    adam_step(state, grads, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    ema_update(state.ema_params, state.params, decay);
    model.zero_grad();
    model.eval();

    MetricsRow row{state.step, static_cast<double>(loss.item()), lr, norm};
    if (state.step % cfg.val_every == 0) {
      if (cfg.val_count > 0 && val_data.size() > 0) {
        if (!val_model) {
          Rng init(0);
          val_model.emplace(model.config(), init);
        }
        val_model->load_parameters(state.ema_params);
        const auto score = validate(*val_model, val_data, cfg.val_count, val_schedule, cfg.seed);
        row.validated = true;
        row.val_psnr = score.psnr;
        row.val_ssim = score.ssim;
        if (score.psnr > best_psnr) {
          best_psnr = score.psnr;
          sink.save(state, "best.ckpt");
        }
      }
      sink.save(state, "last.ckpt");
    }
    sink.append(row);
  }
  if (cfg.total_iters > 0) sink.save(state, "last.ckpt");
  return state;
}

#define SR3_INSTANTIATE(T)                                                                          \
  template struct TrainState<T>;                                                                    \
  template void adam_step(TrainState<T>&, const NamedTensors<T>&, double, double, double, double);  \
  template double global_norm(const NamedTensors<T>&);                                              \
  template double clip_grad_norm(NamedTensors<T>&, double);                                         \
  template void ema_update(NamedTensors<T>&, const NamedTensors<T>&, double);                       \
  template NamedTensors<T> collect_grads(const NamedTensors<T>&);                                   \
  template void CheckpointStore::save(const TrainState<T>&, const std::string&);                    \
  template ValidationScore validate(UNet<T>&, const DatasetHandle&, int, const NoiseSchedule&,       \
                                    std::uint64_t);                                                 \
  template TrainState<T> train_loop(UNet<T>&, const DatasetHandle&, const NoiseSchedule&,           \
                                    const TrainConfig&, CheckpointStore&, const DatasetHandle*,     \
                                    std::vector<std::pair<std::string, std::string>>,               \
                                    const TrainState<T>*);

SR3_INSTANTIATE(float)
SR3_INSTANTIATE(double)

}  // namespace sr3
