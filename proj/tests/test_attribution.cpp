#include "doctest.h"
#include "forgrad/attribution.hpp"
#include "forgrad/metrics.hpp"
#include "support.hpp"

using namespace forgrad;
using fgtest::linear_net;
using fgtest::random_tensor;

namespace {

// flatten -> dense(2) -> relu -> dense(1) on a (1,1,4) input.
Network two_layer(std::vector<double> w1, std::vector<double> w2) {
  return Network({1, 1, 4}, {LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::relu(), LayerSpec::dense(1)},
                 {{"layer1.weight", Tensor({2, 4}, std::move(w1))},
                  {"layer1.bias", Tensor({2})},
                  {"layer3.weight", Tensor({1, 2}, std::move(w2))},
                  {"layer3.bias", Tensor({1})}});
}

Tensor abs_of(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = std::abs(v);
  return out;
}

}  // namespace

TEST_CASE("channel_reduce") {
  Tensor one({1, 2, 2}, {-1, 2, -3, 4});
  CHECK(channel_reduce(one) == Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(channel_reduce(Tensor({2, 1, 1}, {2.0, -2.0})) == Tensor({1, 1}, {2.0}));
  Rng rng = make_rng(1);
  Tensor g = random_tensor({3, 4, 5}, rng);
  Tensor r = channel_reduce(g);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const double want = (std::abs(g.at(0, y, x)) + std::abs(g.at(1, y, x)) + std::abs(g.at(2, y, x))) / 3.0;
      CHECK(r.at(y, x) == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("gradient methods on a linear model") {
  Rng rng = make_rng(2);
  Tensor w = random_tensor({1, 5, 5}, rng), x = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
  Network net = linear_net({w, w * -1.0});
  GradientProvider p(net);
  MethodConfig cfg;
  cfg.n_samples = 8;
  const Tensor absw = abs_of(w).reshaped({5, 5});
  const Tensor abswx = abs_of(hadamard(w, x)).reshaped({5, 5});

  CHECK(saliency(p, x, 0).values == absw);
  CHECK(max_abs_diff(gradient_input(p, x, 0).values, abswx) == 0.0);
  CHECK(max_abs_diff(integrated_gradients(p, x, 0, cfg).values, abswx) < 1e-12);
  cfg.ig_steps = 3;
  CHECK(max_abs_diff(integrated_gradients(p, x, 0, cfg).values, abswx) < 1e-12);
  CHECK(max_abs_diff(smoothgrad(p, x, 0, cfg).values, absw) < 1e-12);

  Network zero = linear_net({Tensor({1, 5, 5}), Tensor({1, 5, 5})});
  CHECK(saliency(GradientProvider(zero), x, 1).values == Tensor({5, 5}));

  Tensor z({1, 5, 5});
  CHECK(gradient_input(p, z, 0).values == Tensor({5, 5}));
  cfg.ig_baseline_tensor = x;
  CHECK(integrated_gradients(p, x, 0, cfg).values == Tensor({5, 5}));
}

TEST_CASE("noise-based methods") {
  Network net = make_preset("cnn-max", 3);
  Rng rng = make_rng(3);
  Tensor x = random_tensor({1, 28, 28}, rng, 0.0, 1.0);
  GradientProvider p(net);
  MethodConfig cfg;
  cfg.n_samples = 6;
  cfg.seed = 21;

  MethodConfig quiet = cfg;
  quiet.noise_std = 0.0;
  CHECK(bitwise_equal(smoothgrad(p, x, 1, quiet).values, saliency(p, x, 1).values));
  CHECK(vargrad(p, x, 1, quiet).values == Tensor({28, 28}));
  const Tensor g = p.gradient(x, 1);
  CHECK(max_abs_diff(squaregrad(p, x, 1, quiet).values, channel_reduce(hadamard(g, g))) < 1e-15);

  MethodConfig single = cfg;
  single.n_samples = 1;
  const Tensor moved = x + smoothgrad_noise(x, single, 0);
  CHECK(bitwise_equal(smoothgrad(p, x, 1, single).values, saliency(p, moved, 1).values));

  CHECK(bitwise_equal(smoothgrad(p, x, 0, cfg).values, smoothgrad(p, x, 0, cfg).values));
  CHECK(bitwise_equal(vargrad(p, x, 0, cfg).values, vargrad(p, x, 0, cfg).values));
  MethodConfig other = cfg;
  other.seed = 22;
  CHECK_FALSE(bitwise_equal(smoothgrad(p, x, 0, cfg).values, smoothgrad(p, x, 0, other).values));

  auto stats = noisy_gradient_stats(p, x, 0, cfg);
  for (double v : stats.variance.data()) CHECK(v >= -1e-15);
}

TEST_CASE("smoothgrad on a linear model stays within Monte-Carlo error of |w|") {
  Rng rng = make_rng(4);
  Tensor w = random_tensor({1, 4, 4}, rng), x = random_tensor({1, 4, 4}, rng);
  Network net = linear_net({w, w});
  MethodConfig cfg;
  cfg.n_samples = 30;
  cfg.noise_std = 0.5;
  // The gradient is constant, so the per-sample spread is zero and the bound
  // collapses to round-off.
  CHECK(max_abs_diff(smoothgrad(GradientProvider(net), x, 0, cfg).values, abs_of(w).reshaped({4, 4})) < 1e-12);
}

TEST_CASE("guided backprop") {
  Tensor x({1, 1, 4}, {1, 1, 1, 1});
  // Both paths active and positive: identical to saliency.
  Network pos = two_layer({1, 0, 0, 0, 0, 1, 1, 0}, {2, 3});
  GradientProvider pp(pos);
  CHECK(guided_backprop(pp, x, 0).values == saliency(pp, x, 0).values);

  // The second hidden unit receives cotangent -3: standard backprop gives
  // 2*e0 - 3*(e1+e2), guided keeps only 2*e0.
  Network neg = two_layer({1, 0, 0, 0, 0, 1, 1, 0}, {2, -3});
  GradientProvider pn(neg);
  CHECK(saliency(pn, x, 0).values == Tensor({1, 4}, {2, 3, 3, 0}));
  CHECK(guided_backprop(pn, x, 0).values == Tensor({1, 4}, {2, 0, 0, 0}));

  Network no_relu = linear_net({Tensor({1, 1, 4}, {1, -2, 3, -4})});
  GradientProvider pl(no_relu);
  CHECK(guided_backprop(pl, x, 0).values == saliency(pl, x, 0).values);
}

TEST_CASE("gradcam") {
  // 1x1 conv with weight 1 feeding a dense layer of -1s: alpha = -1 < 0.
  Network net({1, 3, 3}, {LayerSpec::conv(1, 1), LayerSpec::flatten(), LayerSpec::dense(1)},
              {{"layer0.weight", Tensor({1, 1, 1, 1}, 1.0)},
               {"layer0.bias", Tensor({1})},
               {"layer2.weight", Tensor({1, 9}, -1.0)},
               {"layer2.bias", Tensor({1})}});
  Tensor x({1, 3, 3}, 0.5);
  auto parts = gradcam_parts(net, x, 0, 0);
  CHECK(parts.alpha[0] == -1.0);
  CHECK(gradcam(net, x, 0).values == Tensor({3, 3}));
  CHECK_THROWS_AS(gradcam(net, x, 0, 1), NotAConvLayer);

  GradcamParts flat{Tensor({1, 2, 2}, 1.0), {1.0}};
  CHECK(gradcam_from_parts(flat, 4, 4) == Tensor({4, 4}, 1.0));
  CHECK(last_conv_layer(make_preset("cnn-max", 0)) == 3);
  CHECK_THROWS_AS(last_conv_layer(make_preset("linear", 0)), NotAConvLayer);
}

TEST_CASE("gradcam weights match a finite-difference bump on each channel") {
  const auto& toy = fgtest::toy();
  const Network& net = toy.net;
  const std::size_t conv = last_conv_layer(net);
  const Tensor x = toy.data.images_of(Split::Test).front();
  const std::size_t c = argmax_class(forward(net, x).logits);
  auto parts = gradcam_parts(net, x, c, conv);
  const std::size_t k = parts.features.dim(0), plane = parts.features.dim(1) * parts.features.dim(2);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t ch = 0; ch < k; ++ch) {
    Tensor up = parts.features, down = parts.features;
    for (std::size_t i = 0; i < plane; ++i) {
      up[ch * plane + i] += h;
      down[ch * plane + i] -= h;
    }
    const double fd = (forward_from(net, conv + 1, up)[c] - forward_from(net, conv + 1, down)[c]) / (2 * h);
    worst = std::max(worst, std::abs(fd / static_cast<double>(plane) - parts.alpha[ch]));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("occlusion") {
  Rng rng = make_rng(5);
  Tensor w = random_tensor({1, 4, 4}, rng), x = random_tensor({1, 4, 4}, rng);
  Network net = linear_net({w, w}, {0.3, 0.0});
  MethodConfig cfg;
  cfg.occlusion_patch = 1;
  cfg.occlusion_stride = 1;
  CHECK(max_abs_diff(occlusion(net, x, 0, cfg).values, hadamard(w, x).reshaped({4, 4})) < 1e-12);

  cfg.occlusion_patch = 2;
  cfg.occlusion_stride = 2;
  Tensor map = occlusion(net, x, 0, cfg).values;
  for (std::size_t qy = 0; qy < 2; ++qy)
    for (std::size_t qx = 0; qx < 2; ++qx) {
      double want = 0.0;
      for (std::size_t y = 2 * qy; y < 2 * qy + 2; ++y)
        for (std::size_t xx = 2 * qx; xx < 2 * qx + 2; ++xx) want += w.at(0, y, xx) * x.at(0, y, xx);
      for (std::size_t y = 2 * qy; y < 2 * qy + 2; ++y)
        for (std::size_t xx = 2 * qx; xx < 2 * qx + 2; ++xx) CHECK(map.at(y, xx) == doctest::Approx(want));
    }

  Network flat = linear_net({Tensor({1, 4, 4}), Tensor({1, 4, 4})}, {1.5, 0.0});
  CHECK(occlusion(flat, x, 0, cfg).values == Tensor({4, 4}));
  cfg.occlusion_patch = 5;
  CHECK_THROWS_AS(occlusion(net, x, 0, cfg), ConfigError);
}

TEST_CASE("rise limits") {
  Rng rng = make_rng(6);
  Tensor w = random_tensor({1, 6, 6}, rng), x = random_tensor({1, 6, 6}, rng);
  Network net = linear_net({w, w}, {0.2, 0.0});
  MethodConfig cfg;
  cfg.rise_grid = 3;
  cfg.rise_samples = 40;
  cfg.rise_keep_prob = 1.0 - 1e-12;
  const double fx = forward(net, x).logits[0];
  const Tensor all_kept = rise(net, x, 0, cfg).values;
  for (double v : all_kept.data()) CHECK(v == doctest::Approx(fx).epsilon(1e-12));

  Network flat = linear_net({Tensor({1, 6, 6}), Tensor({1, 6, 6})}, {0.7, 0.0});
  cfg.rise_keep_prob = 0.5;
  const Tensor constant = rise(flat, x, 0, cfg).values;
  for (double v : constant.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

  CHECK(bitwise_equal(rise(net, x, 0, cfg).values, rise(net, x, 0, cfg).values));
  cfg.rise_keep_prob = 1.0;
  CHECK_THROWS_AS(rise(net, x, 0, cfg), ConfigError);
}

TEST_CASE("rise converges to the mask-conditional expectation") {
  // Exact limit E[f M] / E[M] by enumerating all 2^4 coarse grids and every
  // sub-cell shift. Each grid is resized to (g+1)*cell with half-pixel
  // centers and edge clamping, then cropped at the shift.
  Rng rng = make_rng(7);
  Tensor w = random_tensor({1, 4, 4}, rng), x = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  Network net = linear_net({w, w}, {0.1, 0.0});
  const std::size_t g = 2, cell = 2, up = (g + 1) * cell;
  auto coord = [&](std::size_t dst) {
    const double s = std::clamp((dst + 0.5) * static_cast<double>(g) / static_cast<double>(up) - 0.5, 0.0, 1.0);
    return s;
  };
  Tensor num({4, 4}), den({4, 4});
  for (unsigned bits = 0; bits < 16; ++bits)
    for (std::size_t dy = 0; dy < cell; ++dy)
      for (std::size_t dx = 0; dx < cell; ++dx) {
        auto cellv = [&](std::size_t r, std::size_t c) { return (bits >> (r * 2 + c)) & 1u ? 1.0 : 0.0; };
        Tensor m({4, 4});
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t xx = 0; xx < 4; ++xx) {
            const double sy = coord(y + dy), sx = coord(xx + dx);
            m.at(y, xx) = (1 - sy) * ((1 - sx) * cellv(0, 0) + sx * cellv(0, 1)) +
                          sy * ((1 - sx) * cellv(1, 0) + sx * cellv(1, 1));
          }
        double f = 0.1;
        for (std::size_t p = 0; p < 16; ++p) f += w[p] * x[p] * m[p];
        for (std::size_t p = 0; p < 16; ++p) {
          num[p] += f * m[p];
          den[p] += m[p];
        }
      }
  Tensor oracle({4, 4});
  for (std::size_t p = 0; p < 16; ++p) oracle[p] = num[p] / den[p];

  MethodConfig cfg;
  cfg.rise_grid = 2;
  cfg.rise_samples = 10000;
  cfg.seed = 5;
  const Tensor map = rise(net, x, 0, cfg).values;
  const Tensor wx = hadamard(w, x).reshaped({4, 4});
  const double to_oracle = pearson(map.data(), oracle.data());
  const double to_wx = pearson(map.data(), wx.data());
  MESSAGE("rise 4x4 grid 2: pearson to exact limit " << to_oracle << ", to w*x " << to_wx);
  CHECK(to_oracle > 0.9);
  CHECK(max_abs_diff(map, oracle) < 0.05 * (oracle.max() - oracle.min()));
}

TEST_CASE("method names and config checks") {
  for (Method m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("lime"), ConfigError);
  CHECK(white_box_methods().size() == 7);
  CHECK_FALSE(is_white_box(Method::RISE));
  MethodConfig bad;
  bad.ig_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  Network net = make_preset("linear", 0);
  CHECK_THROWS_AS(GradientProvider(net, ReluMode::Standard, -1.0), NegativeSigma);
}
