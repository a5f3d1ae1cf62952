#include "sr3/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "sr3/errors.hpp"
#include "sr3/ops.hpp"

namespace sr3 {

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> blend(const Tensor<T>& a, double wa, const Tensor<T>& b, double wb) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(wa * static_cast<double>(a[i]) + wb * static_cast<double>(b[i]));
  }
  return Tensor<T>(a.shape(), std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> forward_marginal(const Tensor<T>& y0, double gamma, const Tensor<T>& eps) {
  require_same(y0, eps, "forward_marginal");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ShapeError("forward_marginal: gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  return blend(y0, std::sqrt(gamma), eps, std::sqrt(1.0 - gamma));
}

template <typename T>
Tensor<T> forward_step(const Tensor<T>& y_prev, double alpha, const Tensor<T>& eps) {
  require_same(y_prev, eps, "forward_step");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ShapeError("forward_step: alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  return blend(y_prev, std::sqrt(alpha), eps, std::sqrt(1.0 - alpha));
}

template <typename T>
Tensor<T> gaussian_like(const Shape& shape, Rng& rng) {
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.gaussian());
  return out;
}

template <typename T>
Tensor<T> training_loss(NoisePredictor<T>& model, const ConditionedBatch<T>& batch,
                        const NoiseSchedule& schedule, Rng& rng, int p_norm, LossDraws* draws) {
  require_same(batch.x_cond, batch.y0, "training_loss");
  if (p_norm != 1 && p_norm != 2) throw ShapeError("training_loss: p must be 1 or 2");
  const auto& shape = batch.y0.shape();
  const std::size_t n = shape.at(0);
  const std::size_t per_sample = batch.y0.numel() / n;

  std::vector<double> gammas(n);
  std::vector<int> steps(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto drawn = sample_gamma(schedule, rng);
    gammas[s] = drawn.gamma;
    steps[s] = drawn.t;
  }
  const Tensor<T> eps = gaussian_like<T>(shape, rng);

  std::vector<T> noisy(batch.y0.numel());
  for (std::size_t s = 0; s < n; ++s) {
    const double a = std::sqrt(gammas[s]), b = std::sqrt(1.0 - gammas[s]);
    for (std::size_t i = s * per_sample; i < (s + 1) * per_sample; ++i) {
      noisy[i] = static_cast<T>(a * static_cast<double>(batch.y0[i]) +
                                b * static_cast<double>(eps[i]));
    }
  }
  const Tensor<T> y_noisy(shape, std::move(noisy));
  const Tensor<T> predicted = model.predict_eps(batch.x_cond, y_noisy, gammas);
  require_same(predicted, eps, "training_loss: predictor output");

  const auto residual = ops::sub(predicted, eps);
  const auto loss = p_norm == 2 ? ops::mean(ops::square(residual))
                                : ops::mean(ops::abs_pow(residual, T(1)));
  if (!loss.all_finite()) throw NumericalError("training_loss: non-finite loss");
  if (draws) {
    draws->gammas = std::move(gammas);
    draws->steps = std::move(steps);
  }
  return loss;
}

template <typename T>
Tensor<T> reverse_step(NoisePredictor<T>& model, const Tensor<T>& x_cond, const Tensor<T>& y_t,
                       int t, const NoiseSchedule& schedule, Rng& rng) {
  if (t < 1 || t > schedule.steps()) {
    throw ShapeError("reverse_step: t=" + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule.steps()) + "]");
  }
  require_same(x_cond, y_t, "reverse_step");
  NoGradGuard no_grad;
  const double alpha = schedule.alpha(t);
  const double gamma = schedule.gamma(t);
  const std::vector<double> gammas(y_t.dim(0), gamma);
  const Tensor<T> eps_hat = model.predict_eps(x_cond, y_t, gammas);
  require_same(eps_hat, y_t, "reverse_step: predictor output");

  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double eps_coef = (1.0 - alpha) / std::sqrt(1.0 - gamma);
  const double noise_scale = std::sqrt(1.0 - alpha);
  std::vector<T> out(y_t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(inv_sqrt_alpha * (static_cast<double>(y_t[i]) -
                                              eps_coef * static_cast<double>(eps_hat[i])));
  }
  if (t > 1) {
    for (auto& v : out) v = static_cast<T>(static_cast<double>(v) + noise_scale * rng.gaussian());
  }
  Tensor<T> result(y_t.shape(), std::move(out));
  if (!result.all_finite()) {
    throw NumericalError("reverse_step: non-finite sample at t=" + std::to_string(t));
  }
  return result;
}

template <typename T>
Tensor<T> sample(NoisePredictor<T>& model, const Tensor<T>& x_cond, const NoiseSchedule& schedule,
                 Rng& rng) {
  Tensor<T> y = gaussian_like<T>(x_cond.shape(), rng);
  for (int t = schedule.steps(); t >= 1; --t) {
    y = reverse_step(model, x_cond, y, t, schedule, rng);
  }
  for (auto& v : y.data()) v = std::clamp(v, T(-1), T(1));
  return y;
}

#define SR3_INSTANTIATE_DIFFUSION(T)                                                          \
  template Tensor<T> forward_marginal(const Tensor<T>&, double, const Tensor<T>&);            \
  template Tensor<T> forward_step(const Tensor<T>&, double, const Tensor<T>&);                \
  template Tensor<T> gaussian_like(const Shape&, Rng&);                                       \
  template Tensor<T> training_loss(NoisePredictor<T>&, const ConditionedBatch<T>&,            \
                                   const NoiseSchedule&, Rng&, int, LossDraws*);              \
  template Tensor<T> reverse_step(NoisePredictor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                  const NoiseSchedule&, Rng&);                                \
  template Tensor<T> sample(NoisePredictor<T>&, const Tensor<T>&, const NoiseSchedule&, Rng&);

SR3_INSTANTIATE_DIFFUSION(float)
SR3_INSTANTIATE_DIFFUSION(double)

#undef SR3_INSTANTIATE_DIFFUSION

}  // namespace sr3
