#include "sr3/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sr3/errors.hpp"

namespace sr3 {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Linear:
      return "linear";
    case ScheduleKind::Cosine:
      return "cosine";
    case ScheduleKind::Respaced:
      return "respaced";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "respaced") return ScheduleKind::Respaced;
  throw ConfigError("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> betas) : kind_(kind) {
  if (betas.empty()) throw ShapeError("noise schedule needs at least one step");
  beta_.reserve(betas.size() + 1);
  beta_.push_back(0.0);
  alpha_.assign(1, 1.0);
  gamma_.assign(1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double b = betas[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw ShapeError("noise schedule beta[" + std::to_string(i + 1) +
                       "] outside (0, 1): " + std::to_string(b));
    }
    beta_.push_back(b);
    alpha_.push_back(1.0 - b);
    gamma_.push_back(gamma_.back() * alpha_.back());
  }
}

std::size_t NoiseSchedule::checked(int t, int lowest) const {
  if (t < lowest || t > steps()) {
    throw ShapeError("schedule step " + std::to_string(t) + " outside [" +
                     std::to_string(lowest) + ", " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t);
}

NoiseSchedule make_linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ShapeError("make_linear: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ShapeError("make_linear: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    const double span = beta_end - beta_start;
    for (int i = 0; i < steps; ++i) {
      betas[static_cast<std::size_t>(i)] =
          beta_start + span * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
    betas.back() = beta_end;
  }
  return NoiseSchedule(ScheduleKind::Linear, std::move(betas));
}

NoiseSchedule make_cosine(int steps, double offset) {
  if (steps < 1) throw ShapeError("make_cosine: T must be >= 1");
  if (!(offset > 0.0)) throw ShapeError("make_cosine: offset s must be positive");
  const auto f = [&](int t) {
    const double phase = (static_cast<double>(t) / steps + offset) / (1.0 + offset) *
                         std::numbers::pi / 2.0;
    const double c = std::cos(phase);
    return c * c;
  };
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    const double ratio = f(t) / f(t - 1);
    betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - ratio, 0.999);
  }
  return NoiseSchedule(ScheduleKind::Cosine, std::move(betas));
}

NoiseSchedule respace(const NoiseSchedule& schedule, int steps) {
  const int full = schedule.steps();
  if (steps < 1 || steps > full) {
    throw ShapeError("respace: step count " + std::to_string(steps) + " outside [1, " +
                     std::to_string(full) + "]");
  }
  if (steps == full) return schedule;
  std::vector<double> betas;
  betas.reserve(static_cast<std::size_t>(steps));
  int previous = 0;
  for (int k = 1; k <= steps; ++k) {
    const int visited = static_cast<int>(std::llround(static_cast<double>(k) * full / steps));
    betas.push_back(1.0 - schedule.gamma(visited) / schedule.gamma(previous));
    previous = visited;
  }
  return NoiseSchedule(ScheduleKind::Respaced, std::move(betas));
}

GammaSample sample_gamma_from(const NoiseSchedule& schedule, double u_step, double interp) {
  const int steps = schedule.steps();
  int t = 1 + static_cast<int>(std::floor(u_step * steps));
  t = std::clamp(t, 1, steps);
  const double low = schedule.gamma(t);
  const double high = schedule.gamma(t - 1);
  return {low + interp * (high - low), t};
}

GammaSample sample_gamma(const NoiseSchedule& schedule, Rng& rng) {
  const double u_step = rng.uniform();
  const double interp = rng.uniform_open_closed();
  return sample_gamma_from(schedule, u_step, interp);
}

}  // namespace sr3
