// Shared oracles and fixtures for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>

#include "forgrad/dataset.hpp"
#include "forgrad/errors.hpp"
#include "forgrad/nn.hpp"
#include "forgrad/rng.hpp"
#include "forgrad/spectral.hpp"

namespace fgtest {

using namespace forgrad;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

/// Central differences of f around x, step h.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Largest elementwise relative error. The denominator is floored at 1e-3 of
/// the largest reference entry so entries that are zero up to round-off do not
/// dominate.
inline double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
  double scale = 0.0;
  for (double v : numeric.data()) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

/// Quadruple-loop DFT, independent of the library's twiddle tables.
inline std::vector<std::complex<double>> naive_dft(const Tensor& m) {
  const std::size_t h = m.dim(0), w = m.dim(1);
  std::vector<std::complex<double>> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u * y) / static_cast<double>(h) +
                              static_cast<double>(v * x) / static_cast<double>(w));
          acc += m.at(y, x) * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[u * w + v] = acc;
    }
  return out;
}

/// flatten + dense network whose class-c row equals w_c (rows of `weights`).
inline Network linear_net(const std::vector<Tensor>& weights, std::vector<double> biases = {}) {
  const Shape in = weights.front().shape();
  const std::size_t nc = weights.size(), n = weights.front().size();
  Tensor w({nc, n});
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t i = 0; i < n; ++i) w[c * n + i] = weights[c][i];
  Tensor b({nc});
  for (std::size_t c = 0; c < biases.size(); ++c) b[c] = biases[c];
  return Network(in, {LayerSpec::flatten(), LayerSpec::dense(static_cast<std::uint32_t>(nc))},
                 {{"layer1.weight", w}, {"layer1.bias", b}});
}

struct Toy {
  Dataset data;
  Network net;
  double test_accuracy = 0.0;
};

/// Seed-pinned trained cnn-max on 2000 synthetic shapes. Set
/// FORGRAD_MODEL_CACHE to a directory to reuse the trained weights.
inline const Toy& toy() {
  static const Toy instance = [] {
    constexpr std::uint64_t seed = 7;
    Dataset data = gen_synthetic(2000, seed);
    const auto x = data.images_of(Split::Train);
    const auto y = data.labels_of(Split::Train);
    const Network init = make_preset("cnn-max", seed);
    std::optional<Network> net;
    std::filesystem::path cache;
    if (const char* dir = std::getenv("FORGRAD_MODEL_CACHE")) {
      cache = std::filesystem::path(dir) / ("toy-cnn-max-" + std::to_string(init.hash()) + ".forg");
      std::filesystem::create_directories(dir);
      if (std::filesystem::exists(cache)) net = load_model(cache);
    }
    if (!net) {
      TrainConfig cfg;
      cfg.seed = seed;
      net = train(init, x, y, cfg).net;
      if (!cache.empty()) save_model(*net, cache);
    }
    const auto tx = data.images_of(Split::Test);
    const auto ty = data.labels_of(Split::Test);
    const double acc = accuracy(*net, tx, ty);
    return Toy{std::move(data), std::move(*net), acc};
  }();
  return instance;
}

}  // namespace fgtest
