#include "forgrad/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "forgrad/errors.hpp"
#include "forgrad/rng.hpp"

namespace forgrad {

std::string control_name(Control c) {
  switch (c) {
    case Control::Zero: return "zero";
    case Control::Permuted: return "permuted";
    case Control::Uniform: return "uniform";
    case Control::Gaussian2D: return "gaussian2d";
  }
  return "?";
}

std::vector<Control> all_controls() {
  return {Control::Zero, Control::Permuted, Control::Uniform, Control::Gaussian2D};
}

namespace {

Tensor match_norm(Tensor t, double target) {
  const double n = t.norm2();
  if (n == 0.0) return t;
  return t * (target / n);
}

}  // namespace

Tensor control_gradient(Control kind, const Tensor& g, std::uint64_t stream_seed) {
  Rng rng = make_rng(stream_seed, static_cast<std::uint64_t>(kind) + 0x636f6eULL);
  switch (kind) {
    case Control::Zero: return Tensor(g.shape());
    case Control::Permuted: {
      Tensor out = g;
      auto d = out.data();
      for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[uniform_index(rng, i)]);
      return out;
    }
    case Control::Uniform: {
      Tensor out(g.shape());
      for (auto& v : out.data()) v = uniform(rng, -1.0, 1.0);
      return match_norm(std::move(out), g.norm2());
    }
    case Control::Gaussian2D: {
      const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
      Tensor plane({h, w});
      for (int k = 0; k < 3; ++k) {
        const double cy = uniform(rng, 0.0, static_cast<double>(h));
        const double cx = uniform(rng, 0.0, static_cast<double>(w));
        const double s = uniform(rng, 2.0, 6.0);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            plane.at(y, x) += std::exp(-(dy * dy + dx * dx) / (2 * s * s));
          }
      }
      Tensor out(g.shape());
      for (std::size_t ch = 0; ch < c; ++ch) out.set_channel(ch, plane);
      return match_norm(std::move(out), g.norm2());
    }
  }
  throw ValidationError("unknown control");
}

Tensor taylor_epsilon(const Tensor& x, double epsilon_scale, std::uint64_t seed) {
  Rng rng = make_rng(input_seed(seed, x), 0x657073ULL);
  Tensor eps(x.shape());
  for (auto& v : eps.data()) v = normal01(rng);
  return match_norm(std::move(eps), epsilon_scale * x.norm2());
}

TaylorImage taylor_image(const Network& net, const Tensor& x, const SigmaGrid& grid, double epsilon_scale,
                         std::uint64_t seed) {
  const auto cache = forward(net, x);
  const std::size_t c = argmax_class(cache.logits);
  const double fx = cache.logits[c];
  const Tensor g = backward_input(net, cache, c);
  const std::uint64_t stream = input_seed(seed, x);

  const Tensor eps = taylor_epsilon(x, epsilon_scale, seed);
  const double fxe = forward(net, x + eps).logits[c];
  const double delta = fxe - fx;

  TaylorImage out;
  out.zeta_max = std::abs(delta - dot(eps, lowpass_channels(g, grid.bypass())));
  for (double sigma : grid.values()) out.zeta_sigma.push_back(std::abs(delta - dot(eps, lowpass_channels(g, sigma))));
  for (Control k : all_controls()) out.zeta_control.push_back(std::abs(delta - dot(eps, control_gradient(k, g, stream))));
  return out;
}

TaylorReport experiment_taylor(const Network& net, const std::vector<Tensor>& images, const SigmaGrid& grid,
                               const std::vector<double>& epsilon_scales, std::uint64_t seed) {
  if (images.empty()) throw EmptyInput("taylor experiment needs images");
  TaylorReport report;
  report.sigmas = grid.values();
  const std::size_t n_controls = all_controls().size();
  for (double scale : epsilon_scales) {
    if (!(scale > 0.0)) throw ConfigError("epsilon scale must be > 0");
    std::vector<std::vector<double>> per_sigma(grid.values().size()), per_control(n_controls);
    TaylorScale ts;
    ts.epsilon_scale = scale;
    for (const auto& x : images) {
      const auto ti = taylor_image(net, x, grid, scale, seed);
      if (ti.zeta_max == 0.0) {
        ++ts.n_excluded;
        continue;
      }
      for (std::size_t s = 0; s < per_sigma.size(); ++s) per_sigma[s].push_back(ti.zeta_sigma[s] / ti.zeta_max);
      for (std::size_t k = 0; k < n_controls; ++k) per_control[k].push_back(ti.zeta_control[k] / ti.zeta_max);
      ++ts.n_images;
    }
    for (auto& v : per_sigma) ts.filtered.push_back(order_invariant_mean(std::move(v)));
    for (auto& v : per_control) ts.controls.push_back(order_invariant_mean(std::move(v)));
    report.scales.push_back(std::move(ts));
  }
  return report;
}

std::vector<std::size_t> probe_layers(const Network& net) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.logits_layer_end(); ++i) {
    const Shape s = net.activation_shape(i);
    if (s.size() == 3 && std::min(s[1], s[2]) >= 6) out.push_back(i);
  }
  return out;
}

std::size_t first_pool_layer(const Network& net) {
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto k = net.layers()[i].kind;
    if (k == LayerKind::MaxPool2D || k == LayerKind::AvgPool2D) return i;
  }
  throw ValidationError("network has no pooling layer");
}

FourierSignature layer_signature(const Network& net, const std::vector<Tensor>& images, std::size_t layer) {
  if (images.empty()) throw EmptyInput("layer signature needs images");
  SignatureAccumulator acc;
  for (const auto& x : images) {
    const auto cache = forward(net, x);
    const Tensor g = backward_to_layer(net, cache, argmax_class(cache.logits), layer);
    for (std::size_t ch = 0; ch < g.dim(0); ++ch) acc.add(g.channel(ch));
  }
  return acc.result();
}

LayerSlopeReport experiment_layer_slopes(const std::vector<std::pair<std::string, Network>>& variants,
                                         const std::vector<Tensor>& images) {
  LayerSlopeReport report;
  for (const auto& [name, net] : variants) {
    for (std::size_t layer : probe_layers(net)) {
      LayerSlope row;
      row.variant = name;
      row.layer = layer;
      row.kind = to_string(net.layers()[layer].kind);
      row.shape = net.activation_shape(layer);
      row.fit = power_slope(layer_signature(net, images, layer));
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

double mean_abs_spearman(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  std::vector<double> v;
  for (std::size_t i = 0; i < a.size(); ++i) v.push_back(std::abs(spearman(a[i].data(), b[i].data())));
  return order_invariant_mean(std::move(v));
}

}  // namespace

SanityReport experiment_sanity(const Network& net, const std::vector<Tensor>& images, Method method, double sigma,
                               std::uint64_t seed, const MethodConfig& cfg, double threshold) {
  if (!is_white_box(method)) throw UnsupportedMethod(method_name(method) + " is not a white-box method");
  if (images.empty()) throw EmptyInput("sanity check needs images");
  std::vector<std::size_t> classes;
  for (const auto& x : images) classes.push_back(argmax_class(forward(net, x).logits));

  auto maps_for = [&](const Network& n, bool filtered) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.push_back(filtered ? attribute_filtered(n, images[i], classes[i], method, sigma, FilterMode::Gradient, cfg).values
                             : attribute(method, GradientProvider(n), images[i], classes[i], cfg).values);
    }
    return out;
  };
  const auto ref_plain = maps_for(net, false);
  const auto ref_filtered = maps_for(net, true);

  SanityReport report;
  report.method = method;
  report.sigma = sigma;
  report.threshold = threshold;
  const std::size_t depth_max = net.parameterized_layers().size();
  for (std::size_t d = 0; d <= depth_max; ++d) {
    const Network randomized = randomize_weights(net, d, seed);
    SanityRow row;
    row.depth = d;
    row.unfiltered = mean_abs_spearman(ref_plain, maps_for(randomized, false));
    row.filtered = mean_abs_spearman(ref_filtered, maps_for(randomized, true));
    report.rows.push_back(row);
  }
  report.unfiltered_passes = report.rows.back().unfiltered < threshold;
  report.filtered_passes = report.rows.back().filtered < threshold;
  return report;
}

std::pair<Tensor, Tensor> bias_maps(std::size_t height, std::size_t width, std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, 0x62696173ULL + index);
  const double cy = uniform(rng, 0.0, static_cast<double>(height));
  const double cx = uniform(rng, 0.0, static_cast<double>(width));
  const double s = uniform(rng, 2.0, 6.0);
  Tensor blob({height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      blob.at(y, x) = std::exp(-(dy * dy + dx * dx) / (2 * s * s));
    }
  Tensor dispersed = blob;
  auto d = dispersed.data();
  for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[uniform_index(rng, i)]);
  return {std::move(blob), std::move(dispersed)};
}

BiasReport experiment_metric_bias(const Network& net, const std::vector<Tensor>& images, std::size_t n_pairs,
                                  std::uint64_t seed, const MetricConfig& cfg) {
  if (images.empty()) throw EmptyInput("metric bias experiment needs images");
  const Shape& in = net.input_shape();
  BiasReport report;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const Tensor& x = images[p % images.size()];
    const std::size_t c = argmax_class(forward(net, x).logits);
    const auto [blob, dispersed] = bias_maps(in[1], in[2], seed, p);
    BiasPair row;
    row.faithfulness_blob = faithfulness(net, x, blob, c, cfg);
    row.faithfulness_dispersed = faithfulness(net, x, dispersed, c, cfg);
    row.mu_fidelity_blob = mu_fidelity(net, x, blob, c, cfg);
    row.mu_fidelity_dispersed = mu_fidelity(net, x, dispersed, c, cfg);
    report.pairs.push_back(row);
  }
  auto mean_of = [&](double BiasPair::*f) {
    std::vector<double> v;
    for (const auto& r : report.pairs) v.push_back(r.*f);
    return order_invariant_mean(std::move(v));
  };
  report.faithfulness_blob = mean_of(&BiasPair::faithfulness_blob);
  report.faithfulness_dispersed = mean_of(&BiasPair::faithfulness_dispersed);
  report.mu_fidelity_blob = mean_of(&BiasPair::mu_fidelity_blob);
  report.mu_fidelity_dispersed = mean_of(&BiasPair::mu_fidelity_dispersed);
  return report;
}

}  // namespace forgrad
