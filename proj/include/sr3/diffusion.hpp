#pragma once

#include <span>
#include <vector>

#include "sr3/rng.hpp"
#include "sr3/schedule.hpp"
#include "sr3/tensor.hpp"

namespace sr3 {

/// Anything that maps (condition, noisy target, per-sample noise level) to a
/// noise estimate of the target's shape. The U-Net is the production
/// implementation; tests plug in closed-form stand-ins.
template <typename T>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor<T> predict_eps(const Tensor<T>& x_cond, const Tensor<T>& y_t,
                                std::span<const double> gammas) = 0;
};

/// Bicubic-upsampled condition and high-resolution target, both [N,3,H,W]
/// in the model range [-1, 1].
template <typename T>
struct ConditionedBatch {
  Tensor<T> x_cond;
  Tensor<T> y0;
};

/// sqrt(gamma) * y0 + sqrt(1 - gamma) * eps.
template <typename T>
Tensor<T> forward_marginal(const Tensor<T>& y0, double gamma, const Tensor<T>& eps);

/// One forward noising step: sqrt(alpha) * y_prev + sqrt(1 - alpha) * eps.
template <typename T>
Tensor<T> forward_step(const Tensor<T>& y_prev, double alpha, const Tensor<T>& eps);

/// Fills a tensor with N(0,1) draws in row-major order.
template <typename T>
Tensor<T> gaussian_like(const Shape& shape, Rng& rng);

/// Noise draws made by training_loss, exposed for inspection.
struct LossDraws {
  std::vector<double> gammas;
  std::vector<int> steps;
};

/// mean(|f(x_cond, sqrt(g) y0 + sqrt(1-g) eps, g) - eps|^p) over batch and
/// elements. Draw order from `rng`: one (gamma, t) per sample via
/// sample_gamma, then every eps element in row-major order.
template <typename T>
Tensor<T> training_loss(NoisePredictor<T>& model, const ConditionedBatch<T>& batch,
                        const NoiseSchedule& schedule, Rng& rng, int p_norm = 2,
                        LossDraws* draws = nullptr);

/// y_{t-1} = (y_t - (1 - a_t)/sqrt(1 - g_t) f(x, y_t, g_t)) / sqrt(a_t) + sqrt(1 - a_t) z,
/// with z ~ N(0, I) for t > 1 and z = 0 at t = 1.
template <typename T>
Tensor<T> reverse_step(NoisePredictor<T>& model, const Tensor<T>& x_cond, const Tensor<T>& y_t,
                       int t, const NoiseSchedule& schedule, Rng& rng);

/// Full T-step refinement from y_T ~ N(0, I); the result is clamped to [-1, 1].
template <typename T>
Tensor<T> sample(NoisePredictor<T>& model, const Tensor<T>& x_cond, const NoiseSchedule& schedule,
                 Rng& rng);

}  // namespace sr3
