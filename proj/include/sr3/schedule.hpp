#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sr3/rng.hpp"

namespace sr3 {

enum class ScheduleKind { Linear, Cosine, Respaced };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Per-step noise variances beta, retention alpha = 1 - beta and cumulative
/// retention gamma, indexed 1..T. Index 0 of gamma is the sentinel 1.
///
/// Immutable after construction. All arithmetic is double precision.
class NoiseSchedule {
 public:
  /// Builds alpha and gamma from an explicit beta array.
  NoiseSchedule(ScheduleKind kind, std::vector<double> betas);

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(beta_.size()) - 1; }

  // 1-based accessors; gamma(0) == 1.
  double beta(int t) const { return beta_.at(checked(t, 1)); }
  double alpha(int t) const { return alpha_.at(checked(t, 1)); }
  double gamma(int t) const { return gamma_.at(checked(t, 0)); }

  /// The T beta values (index 0 is beta(1)).
  std::vector<double> betas() const { return {beta_.begin() + 1, beta_.end()}; }

  bool operator==(const NoiseSchedule& other) const {
    return kind_ == other.kind_ && beta_ == other.beta_;
  }

 private:
  std::size_t checked(int t, int lowest) const;

  ScheduleKind kind_;
  std::vector<double> beta_;   // [0] unused
  std::vector<double> alpha_;  // [0] unused
  std::vector<double> gamma_;  // [0] == 1
};

/// beta linearly spaced from beta_start (t = 1) to beta_end (t = T) inclusive.
NoiseSchedule make_linear(int steps, double beta_start, double beta_end);

/// gamma(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), with the
/// derived betas clamped at 0.999.
NoiseSchedule make_cosine(int steps, double offset = 0.008);

/// Coarser schedule visiting `steps` evenly spaced original steps (always
/// including T), with betas recomputed so each coarse gamma equals the
/// original gamma at the visited step.
NoiseSchedule respace(const NoiseSchedule& schedule, int steps);

struct GammaSample {
  double gamma;
  int t;
};

/// Piecewise-uniform noise level: t uniform on {1..T}, then gamma uniform
/// on the interval between gamma(t) and gamma(t-1).
GammaSample sample_gamma(const NoiseSchedule& schedule, Rng& rng);

/// Deterministic core of sample_gamma. `u_step` in [0,1) selects t;
/// `interp` in [0,1] moves from gamma(t) (0) to gamma(t-1) (1).
GammaSample sample_gamma_from(const NoiseSchedule& schedule, double u_step, double interp);

}  // namespace sr3
