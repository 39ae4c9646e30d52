#include <numeric>

#include "doctest.h"
#include "forgrad/attribution.hpp"
#include "forgrad/metrics.hpp"
#include "support.hpp"

using namespace forgrad;
using fgtest::linear_net;
using fgtest::random_tensor;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("trapezoid and ordering helpers") {
  const std::vector<double> xs{0.0, 0.5, 1.0}, ys{1.0, 0.5, 0.0};
  CHECK(trapezoid(xs, ys) == doctest::Approx(0.5));
  CHECK(attribution_order(Tensor({2, 2}, {0.1, 0.7, 0.7, -1.0})) == std::vector<std::size_t>{1, 2, 0, 3});
}

TEST_CASE("constant model curves") {
  // Equal logits, except a bias shift on class 0.
  Network net = linear_net({Tensor({1, 4, 4}), Tensor({1, 4, 4})}, {0.4, 0.0});
  const double p = sigmoid(0.4);
  Rng rng = make_rng(1);
  Tensor x = random_tensor({1, 4, 4}, rng), map = random_tensor({4, 4}, rng);
  for (std::size_t step : {1, 3, 16}) {
    MetricConfig cfg;
    cfg.pixel_step = step;
    CHECK(deletion(net, x, map, 0, cfg) == doctest::Approx(p));
    CHECK(insertion(net, x, map, 0, cfg) == doctest::Approx(p));
    CHECK(faithfulness(net, x, map, 0, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  }
  MetricConfig noisy;
  noisy.baseline = BaselineMode::UniformNoise;
  CHECK(deletion(net, x, map, 0, noisy) == doctest::Approx(p));
}

TEST_CASE("single informative pixel gives the two-level deletion curve") {
  Tensor w({1, 4, 4});
  w.at(0, 1, 2) = 3.0;
  Network net = linear_net({w, Tensor({1, 4, 4})});
  Tensor x({1, 4, 4}, 0.5);
  Tensor map({4, 4});
  map.at(1, 2) = 1.0;
  MetricConfig cfg;
  cfg.pixel_step = 1;
  const double top = sigmoid(1.5), floor = 0.5;
  const double n = 16.0;
  const double want = 0.5 * (top + floor) / n + floor * (n - 1.0) / n;
  auto curve = deletion_curve(net, x, map, 0, cfg);
  CHECK(curve.fraction.size() == 17);
  CHECK(curve.probability[0] == doctest::Approx(top));
  CHECK(curve.probability[1] == doctest::Approx(floor));
  CHECK(curve.auc == doctest::Approx(want));
}

TEST_CASE("single-stage insertion is the two-point trapezoid") {
  Rng rng = make_rng(2);
  Tensor w = random_tensor({1, 4, 4}, rng), x = random_tensor({1, 4, 4}, rng);
  Network net = linear_net({w, w * -1.0}, {0.1, 0.0});
  MetricConfig cfg;
  cfg.pixel_step = 16;
  const double pb = forward(net, Tensor({1, 4, 4})).probabilities[0];
  const double px = forward(net, x).probabilities[0];
  CHECK(insertion(net, x, random_tensor({4, 4}, rng), 0, cfg) == doctest::Approx(0.5 * (pb + px)));
}

TEST_CASE("oracle ranking inserts at least as well as random rankings") {
  Rng rng = make_rng(3);
  Tensor w = random_tensor({1, 6, 6}, rng), x = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  Network net = linear_net({w, w * -1.0});
  MetricConfig cfg;
  cfg.pixel_step = 2;
  const double best = insertion(net, x, hadamard(w, x).reshaped({6, 6}), 0, cfg);
  for (int s = 0; s < 50; ++s) {
    Rng r = make_rng(100, static_cast<std::uint64_t>(s));
    CHECK(best >= insertion(net, x, random_tensor({6, 6}, r), 0, cfg) - 1e-12);
  }
}

TEST_CASE("faithfulness is insertion minus deletion") {
  CHECK(faithfulness_from(0.316, 0.127) == doctest::Approx(0.189));
  Network net = make_preset("cnn-max", 5);
  Rng rng = make_rng(4);
  Tensor x = random_tensor({1, 28, 28}, rng, 0.0, 1.0), map = random_tensor({28, 28}, rng);
  MetricConfig cfg;
  const double f = faithfulness(net, x, map, 1, cfg);
  CHECK(f == insertion(net, x, map, 1, cfg) - deletion(net, x, map, 1, cfg));
  CHECK_THROWS_AS(deletion(net, x, Tensor({27, 28}), 1, cfg), ShapeMismatch);
}

TEST_CASE("muFidelity") {
  Rng rng = make_rng(5);
  Tensor w = random_tensor({1, 5, 5}, rng), x = random_tensor({1, 5, 5}, rng);
  Network net = linear_net({w, w});
  MetricConfig cfg;
  cfg.mufid_subset_size = 7;
  cfg.mufid_n_subsets = 64;
  CHECK(mu_fidelity(net, x, hadamard(w, x).reshaped({5, 5}), 0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mu_fidelity(net, x, Tensor({5, 5}, 0.3), 0, cfg) == 0.0);
  cfg.mufid_subset_size = 0;
  CHECK_THROWS_AS(mu_fidelity(net, x, Tensor({5, 5}), 0, cfg), DegenerateSubsetSize);
  cfg.mufid_subset_size = 25;
  CHECK_THROWS_AS(mu_fidelity(net, x, Tensor({5, 5}), 0, cfg), DegenerateSubsetSize);
}

TEST_CASE("sensitivity") {
  Rng rng = make_rng(6);
  Tensor x = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
  MetricConfig cfg;
  cfg.sens_n_samples = 7;
  cfg.seed = 3;
  const Tensor fixed({5, 5}, 2.0);
  CHECK(sensitivity([&](const Tensor&) { return fixed; }, x, cfg) == 0.0);
  CHECK(sensitivity([](const Tensor& t) { return Tensor(t.shape()); }, x, cfg) == 0.0);

  // Identity explanation: mean ||delta|| / ||x||, with delta re-drawn from the
  // documented per-sample streams.
  const double r = cfg.sens_radius * (x.max() - x.min());
  double want = 0.0;
  for (std::size_t i = 0; i < cfg.sens_n_samples; ++i) {
    Rng s = make_rng(input_seed(cfg.seed, x), 0x73656e73ULL + i);
    double sq = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = uniform(s, -r, r);
      sq += d * d;
    }
    want += std::sqrt(sq) / x.norm2();
  }
  want /= static_cast<double>(cfg.sens_n_samples);
  CHECK(sensitivity([](const Tensor& t) { return t; }, x, cfg) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("smoothgrad is more stable than saliency on the toy model") {
  const auto& toy = fgtest::toy();
  auto xs = toy.data.images_of(Split::Test);
  xs.resize(100);
  GradientProvider p(toy.net);
  MethodConfig mc;
  MetricConfig cfg;
  cfg.sens_n_samples = 5;
  std::vector<double> sal, sg;
  for (const auto& x : xs) {
    const std::size_t c = argmax_class(forward(toy.net, x).logits);
    sal.push_back(sensitivity([&](const Tensor& t) { return saliency(p, t, c).values; }, x, cfg));
    sg.push_back(sensitivity([&](const Tensor& t) { return smoothgrad(p, t, c, mc).values; }, x, cfg));
  }
  const double a = order_invariant_mean(sg), b = order_invariant_mean(sal);
  MESSAGE("sensitivity over 100 test images: smoothgrad " << a << ", saliency " << b);
  CHECK(a < b);
}

TEST_CASE("aggregate score arithmetic") {
  CHECK(aggregate_score(0.18, 0.40, 0.67) == doctest::Approx(-0.09));
  CHECK(aggregate_score(0.0, 0.0, 0.0) == 0.0);
  CHECK(aggregate_score(0.28, 0.39, 0.53) == doctest::Approx(0.14));
  CHECK(aggregate_score(0.28, 0.39, 0.53) > aggregate_score(0.18, 0.40, 0.67));
}

TEST_CASE("correlation helpers") {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{5, 5, 5, 5}, d{1, 10, 100, 1000};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, c) == 0.0);
  CHECK(spearman(a, d) == doctest::Approx(1.0));
  const std::vector<double> ties{1, 1, 2, 2};
  CHECK(spearman(ties, a) == doctest::Approx(std::sqrt(0.8)));
}

TEST_CASE("order invariant reductions and summaries") {
  Rng rng = make_rng(7);
  std::vector<double> v(101);
  for (auto& e : v) e = uniform(rng, -1e6, 1e6) * std::pow(10.0, uniform(rng, -8, 8));
  const double s = order_invariant_sum(v);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(order_invariant_sum(v) == s);
  }
  std::vector<ImageMetrics> per{{0.1, 0.5, 0.4, 0.2, 0.3}, {0.3, 0.7, 0.4, 0.6, 0.1}};
  auto r = summarize(per);
  CHECK(r.deletion == doctest::Approx(0.2));
  CHECK(r.faithfulness == doctest::Approx(0.4));
  CHECK(r.aggregate == doctest::Approx(0.4 + 0.4 - 0.2));
  CHECK(r.per_image.size() == 2);
}
