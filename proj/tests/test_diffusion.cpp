#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sr3/diffusion.hpp"
#include "sr3/errors.hpp"

using namespace sr3;
using T = Tensor<double>;

namespace {

template <typename V>
struct ZeroPredictor : NoisePredictor<V> {
  Tensor<V> predict_eps(const Tensor<V>&, const Tensor<V>& y_t, std::span<const double>) override {
    return Tensor<V>::zeros(y_t.shape());
  }
};

// Knows the clean target and inverts the forward marginal, so it returns
// exactly the noise that produced y_t (up to rounding).
template <typename V>
struct TrueNoise : NoisePredictor<V> {
  Tensor<V> y0;
  explicit TrueNoise(Tensor<V> clean) : y0(std::move(clean)) {}
  Tensor<V> predict_eps(const Tensor<V>&, const Tensor<V>& y_t, std::span<const double> g) override {
    Tensor<V> out(y_t.shape());
    const std::size_t per = y_t.numel() / g.size();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double gamma = g[i / per];
      out[i] = static_cast<V>((double(y_t[i]) - std::sqrt(gamma) * double(y0[i])) / std::sqrt(1.0 - gamma));
    }
    return out;
  }
};

template <typename V>
struct FixedEps : NoisePredictor<V> {
  Tensor<V> eps;
  explicit FixedEps(Tensor<V> e) : eps(std::move(e)) {}
  Tensor<V> predict_eps(const Tensor<V>&, const Tensor<V>&, std::span<const double>) override { return eps; }
};

// An input-dependent stand-in: 0.3 y_t + 0.1 x + 0.2 gamma.
struct AffinePredictor : NoisePredictor<double> {
  T predict_eps(const T& x, const T& y_t, std::span<const double> g) override {
    T gam(y_t.shape());
    const std::size_t per = y_t.numel() / g.size();
    for (std::size_t i = 0; i < gam.numel(); ++i) gam[i] = g[i / per];
    return ops::add(ops::add(ops::scale(y_t, 0.3), ops::scale(x, 0.1)), ops::scale(gam, 0.2));
  }
};

struct Moments {
  std::vector<double> mean, var;
};

Moments moments(const std::vector<std::vector<double>>& samples) {
  const std::size_t d = samples.front().size(), n = samples.size();
  Moments m{std::vector<double>(d), std::vector<double>(d)};
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i) m.mean[i] += s[i] / n;
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i) m.var[i] += (s[i] - m.mean[i]) * (s[i] - m.mean[i]) / (n - 1);
  return m;
}

}  // namespace

TEST_CASE("forward_marginal: limits and Monte Carlo moments") {
  Rng rng(1);
  const T y0 = oracle::random_tensor({1, 3, 2, 2}, rng, 0.5, false);
  const T eps = oracle::random_tensor({1, 3, 2, 2}, rng, 1.0, false);
  const T same = forward_marginal(y0, 1.0, eps);
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(same[i] == y0[i]);
  const T noise = forward_marginal(y0, 1e-12, eps);
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(std::abs(noise[i] - eps[i]) < 1e-5);

  const int n = 100000;
  std::vector<std::vector<double>> draws;
  for (int k = 0; k < n; ++k) {
    const T out = forward_marginal(y0, 0.25, gaussian_like<double>(y0.shape(), rng));
    draws.emplace_back(out.data().begin(), out.data().end());
  }
  const auto m = moments(draws);
  for (std::size_t i = 0; i < y0.numel(); ++i) {
    CHECK(std::abs(m.mean[i] - 0.5 * y0[i]) < 3 * std::sqrt(0.75 / n));
    CHECK(std::abs(m.var[i] - 0.75) < 3 * 0.75 * std::sqrt(2.0 / (n - 1)));
  }
  CHECK_THROWS_AS(forward_marginal(y0, 0.5, T::zeros({3})), ShapeError);
}

TEST_CASE("forward_step: limits and step composition matches the marginal") {
  Rng rng(2);
  const T y = oracle::random_tensor({1, 3, 2, 2}, rng, 0.5, false);
  const T eps = oracle::random_tensor({1, 3, 2, 2}, rng, 1.0, false);
  const T near = forward_step(y, 1.0 - 1e-12, eps);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(near[i] - y[i]) < 1e-5);
  const T scaled = forward_step(y, 0.64, T::zeros(y.shape()));
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(scaled[i] == doctest::Approx(0.8 * y[i]).epsilon(1e-15));

  const auto sched = make_linear(5, 0.05, 0.2);
  const int n = 100000;
  std::vector<std::vector<double>> chained;
  for (int k = 0; k < n; ++k) {
    T cur = y;
    for (int t = 1; t <= 5; ++t) cur = forward_step(cur, sched.alpha(t), gaussian_like<double>(y.shape(), rng));
    chained.emplace_back(cur.data().begin(), cur.data().end());
  }
  const auto mc = moments(chained);
  const double g = sched.gamma(5);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(std::abs(mc.mean[i] - std::sqrt(g) * y[i]) < 3 * std::sqrt((1 - g) / n));
    CHECK(std::abs(mc.var[i] - (1 - g)) < 3 * (1 - g) * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("training_loss: true-noise stub, zero stub, recomputation oracle") {
  const auto sched = make_linear(50, 1e-3, 0.05);
  Rng data(3);
  ConditionedBatch<double> batch{oracle::random_tensor({2, 3, 4, 4}, data, 0.5, false),
                                 oracle::random_tensor({2, 3, 4, 4}, data, 0.5, false)};

  TrueNoise<double> exact(batch.y0);
  Rng r1(4);
  const double zero_loss = training_loss<double>(exact, batch, sched, r1).item();
  CHECK(zero_loss >= 0.0);
  CHECK(zero_loss < 1e-20);

  ConditionedBatch<double> large{T::zeros({256, 3, 8, 8}), T::zeros({256, 3, 8, 8})};
  ZeroPredictor<double> zero;
  Rng r2(5);
  CHECK(std::abs(training_loss<double>(zero, large, sched, r2).item() - 1.0) < 0.02);

  for (int p : {1, 2}) {
    AffinePredictor f;
    Rng r3(6);
    LossDraws draws;
    const double got = training_loss<double>(f, batch, sched, r3, p, &draws).item();
    Rng replay(6);
    std::vector<double> gammas;
    for (int s = 0; s < 2; ++s) gammas.push_back(sample_gamma(sched, replay).gamma);
    CHECK(gammas == draws.gammas);
    const std::size_t per = batch.y0.numel() / 2;
    double total = 0.0;
    for (std::size_t i = 0; i < batch.y0.numel(); ++i) {
      const double g = gammas[i / per];
      const double e = replay.gaussian();
      const double noisy = std::sqrt(g) * batch.y0[i] + std::sqrt(1 - g) * e;
      const double pred = 0.3 * noisy + 0.1 * batch.x_cond[i] + 0.2 * g;
      total += std::pow(std::abs(pred - e), p);
    }
    CHECK(std::abs(got - total / batch.y0.numel()) < 1e-12);
    CHECK(got > 0.0);
  }
  CHECK_THROWS_AS(training_loss<double>(zero, batch, sched, r2, 3), ShapeError);
}

TEST_CASE("reverse_step: t=1 reconstruction, zero predictor, formula oracle") {
  const auto sched = make_linear(10, 1e-3, 0.1);
  Rng rng(7);
  const T y0 = oracle::random_tensor({1, 3, 4, 4}, rng, 0.5, false);
  const T eps = oracle::random_tensor({1, 3, 4, 4}, rng, 1.0, false);
  const T x = T::zeros(y0.shape());

  FixedEps<double> fixed(eps);
  const T y1 = forward_marginal(y0, sched.gamma(1), eps);
  const T back = reverse_step<double>(fixed, x, y1, 1, sched, rng);
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(std::abs(back[i] - y0[i]) < 1e-12);

  // Single precision: the same identity holds to rounding.
  Tensor<float> y0f(y0.shape()), epsf(y0.shape());
  for (std::size_t i = 0; i < y0.numel(); ++i) {
    y0f[i] = float(y0[i]);
    epsf[i] = float(eps[i]);
  }
  FixedEps<float> truef(epsf);
  const auto y1f = forward_marginal(y0f, sched.gamma(1), epsf);
  const auto backf = reverse_step<float>(truef, Tensor<float>::zeros(y0.shape()), y1f, 1, sched, rng);
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(std::abs(backf[i] - y0f[i]) < 1e-5);

  ZeroPredictor<double> zero;
  const T plain = reverse_step<double>(zero, x, y1, 1, sched, rng);
  for (std::size_t i = 0; i < y0.numel(); ++i)
    CHECK(plain[i] == doctest::Approx(y1[i] / std::sqrt(sched.alpha(1))).epsilon(1e-15));

  const int t = 6;
  Rng a(8), b(8);
  const T out = reverse_step<double>(fixed, x, y1, t, sched, a);
  const double al = sched.alpha(t), g = sched.gamma(t);
  for (std::size_t i = 0; i < y0.numel(); ++i) {
    const double ref = (y1[i] - (1 - al) / std::sqrt(1 - g) * eps[i]) / std::sqrt(al) + std::sqrt(1 - al) * b.gaussian();
    CHECK(std::abs(out[i] - ref) < 1e-12);
  }
  CHECK_THROWS_AS(reverse_step<double>(zero, x, y1, 0, sched, a), ShapeError);
  CHECK_THROWS_AS(reverse_step<double>(zero, x, y1, 11, sched, a), ShapeError);
}

TEST_CASE("sample: single-step recovery, determinism, scripted loop") {
  Rng rng(10);
  const T y0 = oracle::random_tensor({1, 3, 4, 4}, rng, 0.3, false);
  const auto one = make_linear(1, 0.05, 0.05);
  TrueNoise<double> oracle_eps(y0);
  Rng s(11);
  const T rec = sample<double>(oracle_eps, T::zeros(y0.shape()), one, s);
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(std::abs(rec[i] - y0[i]) < 1e-12);

  const auto sched = make_linear(10, 1e-2, 0.2);
  ZeroPredictor<double> zero;
  const T x = T::zeros({1, 3, 8, 8});
  Rng s1(12), s2(12), s3(12);
  const T first = sample<double>(zero, x, sched, s1);
  const T second = sample<double>(zero, x, sched, s2);
  std::vector<double> y(x.numel());
  for (auto& v : y) v = s3.gaussian();
  for (int t = 10; t >= 1; --t) {
    const double inv = 1.0 / std::sqrt(sched.alpha(t)), scale = std::sqrt(1.0 - sched.alpha(t));
    for (auto& v : y) v = inv * v;
    if (t > 1)
      for (auto& v : y) v = v + scale * s3.gaussian();
  }
  bool identical = true, scripted = true;
  for (std::size_t i = 0; i < y.size(); ++i) {
    identical = identical && first[i] == second[i];
    scripted = scripted && first[i] == std::clamp(y[i], -1.0, 1.0);
  }
  CHECK(identical);
  CHECK(scripted);
}
