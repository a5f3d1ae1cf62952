#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sr3/denoiser.hpp"
#include "sr3/errors.hpp"

using namespace sr3;
using T = Tensor<double>;

namespace {

DenoiserConfig tiny(std::set<int> attention = {}, int blocks = 1) {
  DenoiserConfig c;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.res_blocks_per_level = blocks;
  c.attention_resolutions = std::move(attention);
  c.groups = 2;
  c.gamma_embed_dim = 8;
  c.image_size = 8;
  return c;
}

// Replaces every parameter with random values so that no branch is inert.
void randomize(UNet<double>& model, Rng& rng, double scale = 0.3) {
  for (auto& p : model.parameters()) {
    const bool gain = p.name.find(".gain") != std::string::npos;
    for (auto& v : p.tensor.data()) v = (gain ? 1.0 : 0.0) + scale * rng.gaussian();
  }
}

bool all_zero(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

}  // namespace

TEST_CASE("parameter count matches the closed-form topology count") {
  for (const auto& cfg : {tiny(), tiny({4}), tiny({8, 4}, 2)}) {
    Rng rng(1);
    UNet<double> model(cfg, rng);
    CHECK(model.parameter_count() == oracle::unet_parameter_count(cfg));
  }
  DenoiserConfig big;
  big.base_channels = 16;
  big.channel_multipliers = {1, 2, 2, 4};
  big.res_blocks_per_level = 2;
  big.attention_resolutions = {16, 32};
  big.image_size = 32;
  Rng rng(2);
  UNet<float> model(big, rng);
  CHECK(model.parameter_count() == oracle::unet_parameter_count(big));
}

TEST_CASE("fresh model: zero output, shape contract, deterministic build") {
  Rng r1(5), r2(5);
  UNet<double> a(tiny({4}), r1), b(tiny({4}), r2);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters()[i].tensor;
    const auto& pb = b.parameters()[i].tensor;
    CHECK(std::equal(pa.data().begin(), pa.data().end(), pb.data().begin()));
  }
  Rng data(6);
  const T x = oracle::random_tensor({2, 3, 16, 16}, data, 1.0, false);
  const T y = oracle::random_tensor({2, 3, 16, 16}, data, 1.0, false);
  const std::vector<double> g{0.3, 0.9};
  const T out = a.predict_eps(x, y, g);
  CHECK(out.shape() == y.shape());
  CHECK(all_zero(out.data()));
}

TEST_CASE("residual blocks and attention are the identity at initialisation") {
  Rng rng(7);
  UNet<double> model(tiny({8, 4}), rng);
  for (const auto& p : model.parameters()) {
    const auto& n = p.name;
    if (n.find(".conv2.") != std::string::npos || n.find(".film.") != std::string::npos ||
        n.find(".wo") != std::string::npos || n.starts_with("out.conv")) {
      INFO(n);
      CHECK(all_zero(p.tensor.data()));
    }
  }
  // With the zero-initialised branches left alone, nothing inside a residual
  // or attention branch can influence the output.
  auto head_only = [](UNet<double>& m, Rng& r) {
    for (auto& p : m.parameters())
      if (p.name.starts_with("out.conv"))
        for (auto& v : p.tensor.data()) v = r.gaussian();
  };
  Rng h1(8);
  head_only(model, h1);
  Rng data(9);
  const T x = oracle::random_tensor({1, 3, 8, 8}, data, 1.0, false);
  const T y = oracle::random_tensor({1, 3, 8, 8}, data, 1.0, false);
  const std::vector<double> g{0.5};
  const T before = model.predict_eps(x, y, g);
  CHECK_FALSE(all_zero(before.data()));
  Rng noise(10);
  for (auto& p : model.parameters()) {
    const auto& n = p.name;
    const bool branch = n.find(".conv1.") != std::string::npos || n.find(".norm1.") != std::string::npos ||
                        n.find(".norm2.") != std::string::npos || n.find(".wq") != std::string::npos ||
                        n.find(".wk") != std::string::npos || n.find(".wv") != std::string::npos ||
                        n.find(".attn.norm.") != std::string::npos || n.starts_with("embed.");
    if (branch)
      for (auto& v : p.tensor.data()) v += noise.gaussian();
  }
  const T after = model.predict_eps(x, y, g);
  for (std::size_t i = 0; i < before.numel(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
}

TEST_CASE("forward pass matches the scripted layer-by-layer oracle") {
  for (const auto& cfg : {tiny(), tiny({4}), tiny({8, 4}, 2)}) {
    Rng rng(11);
    UNet<double> model(cfg, rng);
    randomize(model, rng);
    Rng data(12);
    const T x = oracle::random_tensor({2, 3, 8, 8}, data, 1.0, false);
    const T y = oracle::random_tensor({2, 3, 8, 8}, data, 1.0, false);
    const std::vector<double> g{0.2, 0.85};
    const T out = model.predict_eps(x, y, g);
    const auto ref = oracle::unet_forward(cfg, oracle::param_map(model.parameters()), oracle::Arr(x),
                                          oracle::Arr(y), g);
    REQUIRE(ref.shape == out.shape());
    double scale = 0.0;
    for (double v : ref.v) scale = std::max(scale, std::abs(v));
    CHECK(scale > 0.0);
    CHECK(oracle::max_abs_diff(ref.v, out.data()) < 1e-10 * std::max(1.0, scale));
  }
}

TEST_CASE("gamma embedding: formula, determinism, distinctness, errors") {
  const auto e = gamma_embedding(0.25, 8);
  const auto ref = oracle::gamma_embedding(0.25, 8);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(e[i] - ref[i]) < 1e-12);
  CHECK(gamma_embedding(0.25, 8) == e);
  const auto a = gamma_embedding(0.1, 16), b = gamma_embedding(0.9, 16);
  double d = 0.0;
  for (int i = 0; i < 16; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(d > 0.0);
  CHECK_THROWS_AS(gamma_embedding(0.5, 7), ShapeError);
}

TEST_CASE("attention placement on a five-level network") {
  DenoiserConfig c;
  c.base_channels = 4;
  c.groups = 4;
  c.channel_multipliers = {1, 2, 4, 8, 16};
  c.res_blocks_per_level = 1;
  c.attention_resolutions = {16, 32, 64};
  c.image_size = 64;
  Rng rng(13);
  UNet<float> model(c, rng);
  const auto sites = model.attention_sites();
  CHECK(std::set<int>(sites.begin(), sites.end()) == std::set<int>{16, 32, 64});
  // One encoder block and two decoder blocks per level carry attention.
  for (int r : {16, 32, 64}) CHECK(std::count(sites.begin(), sites.end(), r) == 3);

  c.attention_resolutions = {};
  Rng rng2(13);
  CHECK(UNet<float>(c, rng2).attention_sites().empty());

  c.attention_resolutions = {128};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("every skip connection influences the output") {
  Rng rng(14);
  UNet<double> model(tiny({4}), rng);
  randomize(model, rng);
  Rng data(15);
  const T x = oracle::random_tensor({1, 3, 8, 8}, data, 1.0, false);
  const T y = oracle::random_tensor({1, 3, 8, 8}, data, 1.0, false);
  const std::vector<double> g{0.4};
  const T base = model.predict_eps(x, y, g);
  for (std::size_t k = 0; k < model.skip_count(); ++k) {
    model.ablate_skip(k);
    const T ablated = model.predict_eps(x, y, g);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.numel(); ++i) diff = std::max(diff, std::abs(base[i] - ablated[i]));
    INFO("skip " << k);
    CHECK(diff > 1e-6);
  }
  model.ablate_skip(std::nullopt);
}

TEST_CASE("end-to-end gradient check on the tiny network") {
  DenoiserConfig cfg = tiny({4});
  cfg.dropout_p = 0.1;
  Rng rng(16);
  UNet<double> model(cfg, rng);
  randomize(model, rng);
  Rng data(17);
  T x = oracle::random_tensor({2, 3, 8, 8}, data, 1.0);
  T y = oracle::random_tensor({2, 3, 8, 8}, data, 1.0);
  const T w = oracle::random_tensor({2, 3, 8, 8}, data, 1.0, false);
  const std::vector<double> g{0.3, 0.7};
  std::vector<T> inputs{x, y};
  for (auto& p : model.parameters()) inputs.push_back(p.tensor);
  auto loss = [&] {
    Rng mask(18);  // identical dropout mask on every evaluation
    model.train(mask);
    auto out = oracle::weighted_sum(model.predict_eps(x, y, g), w);
    model.eval();
    return out;
  };
  const auto r = oracle::grad_check(inputs, loss);
  const std::string where = r.worst_tensor < 2 ? (r.worst_tensor ? "y_t" : "x_cond")
                                               : model.parameters()[r.worst_tensor - 2].name;
  MESSAGE("end-to-end: " << r.checked << " entries, max relative error " << r.max_rel_error << " at "
                         << where << "[" << r.worst_index << "] analytic " << r.worst_analytic
                         << " numeric " << r.worst_numeric);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("shape and configuration errors") {
  Rng rng(19);
  UNet<double> model(tiny(), rng);
  const std::vector<double> g{0.5};
  CHECK_THROWS_AS(model.predict_eps(T::zeros({1, 3, 8, 8}), T::zeros({1, 3, 4, 8}), g), ShapeError);
  CHECK_THROWS_AS(model.predict_eps(T::zeros({1, 3, 9, 9}), T::zeros({1, 3, 9, 9}), g), ShapeError);
  CHECK_THROWS_AS(model.predict_eps(T::zeros({2, 3, 8, 8}), T::zeros({2, 3, 8, 8}), g), ShapeError);

  auto bad = tiny();
  bad.groups = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny();
  bad.dropout_p = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny();
  bad.res_blocks_per_level = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Rng other(20);
  UNet<double> bigger(tiny({4}), other);
  CHECK_THROWS_AS(model.load_parameters(bigger.parameters()), ShapeError);
  Rng same(21);
  UNet<double> twin(tiny(), same);
  model.load_parameters(twin.parameters());
  CHECK(model.parameters()[0].tensor[0] == twin.parameters()[0].tensor[0]);
}
