#include "forgrad/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "forgrad/errors.hpp"
#include "forgrad/rng.hpp"
#include "forgrad/spectral.hpp"

namespace forgrad {

namespace {

struct MethodInfo {
  Method method;
  const char* name;
  bool white_box;
};

constexpr MethodInfo kMethods[] = {
    {Method::Saliency, "saliency", true},
    {Method::GradientInput, "gradient-input", true},
    {Method::IntegratedGradients, "integrated-gradients", true},
    {Method::SmoothGrad, "smoothgrad", true},
    {Method::SquareGrad, "squaregrad", true},
    {Method::VarGrad, "vargrad", true},
    {Method::GuidedBackprop, "guided-backprop", true},
    {Method::GradCAM, "gradcam", false},
    {Method::Occlusion, "occlusion", false},
    {Method::RISE, "rise", false},
};

const MethodInfo& info(Method m) {
  for (const auto& i : kMethods)
    if (i.method == m) return i;
  throw ConfigError("unknown method");
}

double logit(const Network& net, const Tensor& x, std::size_t c) { return forward(net, x).logits[c]; }

void check_input(const Network& net, const Tensor& x, std::size_t c) {
  if (x.shape() != net.input_shape())
    throw ShapeMismatch("input " + shape_string(x.shape()) + " vs network input " +
                        shape_string(net.input_shape()));
  if (c >= net.num_classes()) throw ValidationError("target class out of range");
}

AttributionMap make_map(Tensor values, Method m, std::size_t c, const GradientProvider* provider) {
  AttributionMap out{std::move(values), m, c, std::nullopt, Provenance::Unfiltered};
  if (provider && provider->sigma()) {
    out.sigma = provider->sigma();
    out.provenance = Provenance::GradientFiltered;
  }
  if (!out.values.all_finite()) throw NonFinite(method_name(m) + " produced non-finite values");
  return out;
}

}  // namespace

std::string method_name(Method m) { return info(m).name; }

Method parse_method(const std::string& name) {
  for (const auto& i : kMethods)
    if (name == i.name) return i.method;
  throw ConfigError("unknown method '" + name + "'");
}

std::vector<Method> all_methods() {
  std::vector<Method> out;
  for (const auto& i : kMethods) out.push_back(i.method);
  return out;
}

std::vector<Method> white_box_methods() {
  std::vector<Method> out;
  for (const auto& i : kMethods)
    if (i.white_box) out.push_back(i.method);
  return out;
}

bool is_white_box(Method m) { return info(m).white_box; }

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Unfiltered: return "unfiltered";
    case Provenance::GradientFiltered: return "gradient-filtered";
    case Provenance::MapFiltered: return "map-filtered";
  }
  return "?";
}

void MethodConfig::validate() const {
  if (n_samples < 1 || ig_steps < 1 || rise_samples < 1 || rise_grid < 1 || occlusion_patch < 1 ||
      occlusion_stride < 1)
    throw ConfigError("method counts must be >= 1");
  if (!(rise_keep_prob > 0.0 && rise_keep_prob < 1.0))
    throw ConfigError("rise_keep_prob must lie in (0,1)");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
}

GradientProvider::GradientProvider(const Network& net, ReluMode mode, std::optional<double> sigma)
    : net_(&net), mode_(mode), sigma_(sigma) {
  if (sigma_ && !(*sigma_ >= 0.0)) throw NegativeSigma("sigma must be >= 0");
}

Tensor GradientProvider::gradient(const Tensor& x, std::size_t target_class) const {
  Tensor g = backward_input(*net_, forward(*net_, x), target_class, mode_);
  if (sigma_) g = lowpass_channels(g, *sigma_);
  return g;
}

Tensor channel_reduce(const Tensor& g) {
  if (g.rank() != 3) throw ShapeMismatch("channel_reduce expects (C,H,W)");
  const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
  Tensor out({h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) out[i] += std::abs(g[ch * h * w + i]);
  const double inv = 1.0 / static_cast<double>(c);
  if (c > 1)
    for (auto& v : out.data()) v *= inv;
  return out;
}

std::uint64_t input_seed(std::uint64_t seed, const Tensor& x) {
  return derive_seed(seed, fnv1a_values(x.data()));
}

AttributionMap saliency(const GradientProvider& provider, const Tensor& x, std::size_t c) {
  check_input(provider.network(), x, c);
  return make_map(channel_reduce(provider.gradient(x, c)), Method::Saliency, c, &provider);
}

AttributionMap gradient_input(const GradientProvider& provider, const Tensor& x, std::size_t c) {
  check_input(provider.network(), x, c);
  return make_map(channel_reduce(hadamard(provider.gradient(x, c), x)), Method::GradientInput, c,
                  &provider);
}

Tensor ig_baseline_for(const Tensor& x, const MethodConfig& cfg) {
  if (cfg.ig_baseline_tensor) {
    if (cfg.ig_baseline_tensor->shape() != x.shape()) throw ShapeMismatch("IG baseline shape");
    return *cfg.ig_baseline_tensor;
  }
  return Tensor(x.shape(), cfg.ig_baseline);
}

Tensor integrated_gradients_signed(const GradientProvider& provider, const Tensor& x, std::size_t c,
                                   const MethodConfig& cfg) {
  check_input(provider.network(), x, c);
  cfg.validate();
  const Tensor b = ig_baseline_for(x, cfg);
  const Tensor delta = x - b;
  Tensor acc(x.shape());
  const double m = static_cast<double>(cfg.ig_steps);
  for (std::size_t k = 1; k <= cfg.ig_steps; ++k) {
    const double t = static_cast<double>(k) / m;
    Tensor point = b;
    for (std::size_t i = 0; i < point.size(); ++i) point[i] += t * delta[i];
    const Tensor g = provider.gradient(point, c);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = delta[i] * (acc[i] / m);
  return acc;
}

AttributionMap integrated_gradients(const GradientProvider& provider, const Tensor& x, std::size_t c,
                                    const MethodConfig& cfg) {
  return make_map(channel_reduce(integrated_gradients_signed(provider, x, c, cfg)),
                  Method::IntegratedGradients, c, &provider);
}

Tensor smoothgrad_noise(const Tensor& x, const MethodConfig& cfg, std::size_t index) {
  const double stddev = cfg.noise_std * (x.max() - x.min());
  Rng rng = make_rng(cfg.seed, index);
  Tensor eta(x.shape());
  for (auto& v : eta.data()) v = stddev * normal01(rng);
  return eta;
}

NoisyGradientStats noisy_gradient_stats(const GradientProvider& provider, const Tensor& x,
                                        std::size_t c, const MethodConfig& cfg) {
  check_input(provider.network(), x, c);
  cfg.validate();
  // Welford updates: a constant gradient stream keeps the mean bit-identical
  // to that gradient and the second moment exactly zero.
  Tensor mean(x.shape()), m2(x.shape()), mean_sq(x.shape());
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const Tensor g = provider.gradient(x + smoothgrad_noise(x, cfg, i), c);
    const double n = static_cast<double>(i + 1);
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double d = g[j] - mean[j];
      mean[j] += d / n;
      m2[j] += d * (g[j] - mean[j]);
      mean_sq[j] += (g[j] * g[j] - mean_sq[j]) / n;
    }
  }
  const double n = static_cast<double>(cfg.n_samples);
  for (auto& v : m2.data()) v = std::max(0.0, v / n);
  return {std::move(mean), std::move(mean_sq), std::move(m2)};
}

AttributionMap smoothgrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                          const MethodConfig& cfg) {
  return make_map(channel_reduce(noisy_gradient_stats(provider, x, c, cfg).mean), Method::SmoothGrad,
                  c, &provider);
}

AttributionMap squaregrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                          const MethodConfig& cfg) {
  return make_map(channel_reduce(noisy_gradient_stats(provider, x, c, cfg).mean_sq),
                  Method::SquareGrad, c, &provider);
}

AttributionMap vargrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                       const MethodConfig& cfg) {
  if (cfg.n_samples < 2) throw ConfigError("vargrad needs n_samples >= 2");
  return make_map(channel_reduce(noisy_gradient_stats(provider, x, c, cfg).variance),
                  Method::VarGrad, c, &provider);
}

AttributionMap guided_backprop(const GradientProvider& provider, const Tensor& x, std::size_t c) {
  check_input(provider.network(), x, c);
  const GradientProvider guided = provider.with_mode(ReluMode::Guided);
  return make_map(channel_reduce(guided.gradient(x, c)), Method::GuidedBackprop, c, &provider);
}

// ---------------------------------------------------------------------------
// GradCAM

std::size_t last_conv_layer(const Network& net) {
  const auto& layers = net.layers();
  for (std::size_t i = layers.size(); i-- > 0;)
    if (layers[i].kind == LayerKind::Conv2D) return i;
  throw NotAConvLayer("network has no Conv2D layer");
}

GradcamParts gradcam_parts(const Network& net, const Tensor& x, std::size_t c, std::size_t conv_layer) {
  check_input(net, x, c);
  if (conv_layer >= net.layers().size() || net.layers()[conv_layer].kind != LayerKind::Conv2D)
    throw NotAConvLayer("layer " + std::to_string(conv_layer) + " is not a Conv2D layer");
  const ForwardCache cache = forward(net, x);
  const std::size_t feature_index = conv_layer + 1;
  GradcamParts parts;
  parts.features = cache.inputs.at(feature_index);
  const Tensor grad = backward_to_layer(net, cache, c, feature_index);
  const std::size_t k = grad.dim(0), plane = grad.dim(1) * grad.dim(2);
  parts.alpha.assign(k, 0.0);
  for (std::size_t ch = 0; ch < k; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += grad[ch * plane + i];
    parts.alpha[ch] = s / static_cast<double>(plane);
  }
  return parts;
}

Tensor bilinear_resize(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw ShapeMismatch("bilinear_resize expects (h,w)");
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor out({height, width});
  auto source = [](std::size_t dst, std::size_t n_src, std::size_t n_dst) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
    const auto i0 = static_cast<std::size_t>(s);
    const std::size_t i1 = std::min(i0 + 1, n_src - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = source(y, h, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = source(x, w, width);
      const double top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
      const double bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
      out.at(y, x) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Tensor gradcam_from_parts(const GradcamParts& parts, std::size_t height, std::size_t width) {
  const Tensor& a = parts.features;
  if (a.rank() != 3 || a.dim(0) != parts.alpha.size()) throw ShapeMismatch("GradCAM feature/weight mismatch");
  const std::size_t plane = a.dim(1) * a.dim(2);
  Tensor cam({a.dim(1), a.dim(2)});
  for (std::size_t k = 0; k < parts.alpha.size(); ++k)
    for (std::size_t i = 0; i < plane; ++i) cam[i] += parts.alpha[k] * a[k * plane + i];
  for (auto& v : cam.data()) v = std::max(0.0, v);
  return bilinear_resize(cam, height, width);
}

AttributionMap gradcam(const Network& net, const Tensor& x, std::size_t c,
                       std::optional<std::size_t> conv_layer) {
  const std::size_t layer = conv_layer ? *conv_layer : last_conv_layer(net);
  const auto parts = gradcam_parts(net, x, c, layer);
  return make_map(gradcam_from_parts(parts, x.dim(1), x.dim(2)), Method::GradCAM, c, nullptr);
}

// ---------------------------------------------------------------------------
// Black-box

AttributionMap occlusion(const Network& net, const Tensor& x, std::size_t c, const MethodConfig& cfg) {
  check_input(net, x, c);
  cfg.validate();
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t patch = cfg.occlusion_patch, stride = cfg.occlusion_stride;
  if (patch > std::min(h, w)) throw ConfigError("occlusion patch larger than the input");
  Tensor baseline(x.shape(), cfg.occlusion_baseline);
  if (cfg.occlusion_noise_baseline) {
    Rng rng = make_rng(cfg.seed, 0x6f63636cULL);
    for (auto& v : baseline.data()) v = uniform(rng, -1.0, 1.0);
  }
  const double reference = logit(net, x, c);
  Tensor sum({h, w}), count({h, w});
  for (std::size_t top = 0; top + patch <= h; top += stride) {
    for (std::size_t left = 0; left + patch <= w; left += stride) {
      Tensor occluded = x;
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t y = top; y < top + patch; ++y)
          for (std::size_t xx = left; xx < left + patch; ++xx) occluded.at(k, y, xx) = baseline.at(k, y, xx);
      const double drop = reference - logit(net, occluded, c);
      for (std::size_t y = top; y < top + patch; ++y)
        for (std::size_t xx = left; xx < left + patch; ++xx) {
          sum.at(y, xx) += drop;
          count.at(y, xx) += 1.0;
        }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0.0) sum[i] /= count[i];
  return make_map(std::move(sum), Method::Occlusion, c, nullptr);
}

Tensor rise_mask(std::size_t height, std::size_t width, const MethodConfig& cfg, std::uint64_t stream_seed,
                 std::size_t index) {
  const std::size_t g = cfg.rise_grid;
  const std::size_t cell_h = (height + g - 1) / g, cell_w = (width + g - 1) / g;
  const std::size_t up_h = (g + 1) * cell_h, up_w = (g + 1) * cell_w;
  Rng rng = make_rng(stream_seed, index);
  Tensor grid({g, g});
  for (auto& v : grid.data()) v = uniform01(rng) < cfg.rise_keep_prob ? 1.0 : 0.0;
  const std::size_t dy = uniform_index(rng, cell_h), dx = uniform_index(rng, cell_w);
  Tensor mask({height, width});
  auto source = [g](std::size_t dst, std::size_t n_dst) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(g) / static_cast<double>(n_dst) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(g - 1));
    const auto i0 = static_cast<std::size_t>(s);
    return std::tuple{i0, std::min(i0 + 1, g - 1), s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = source(y + dy, up_h);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = source(x + dx, up_w);
      const double top = grid.at(y0, x0) * (1.0 - fx) + grid.at(y0, x1) * fx;
      const double bottom = grid.at(y1, x0) * (1.0 - fx) + grid.at(y1, x1) * fx;
      mask.at(y, x) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return mask;
}

AttributionMap rise(const Network& net, const Tensor& x, std::size_t c, const MethodConfig& cfg) {
  check_input(net, x, c);
  cfg.validate();
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::uint64_t stream = derive_seed(cfg.seed, 0x72697365ULL);
  for (int attempt = 0; attempt < 2; ++attempt) {
    Tensor weighted({h, w}), coverage({h, w});
    for (std::size_t i = 0; i < cfg.rise_samples; ++i) {
      const Tensor mask = rise_mask(h, w, cfg, stream, i);
      Tensor masked = x;
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t p = 0; p < h * w; ++p) masked[k * h * w + p] *= mask[p];
      const double score = logit(net, masked, c);
      for (std::size_t p = 0; p < h * w; ++p) {
        weighted[p] += score * mask[p];
        coverage[p] += mask[p];
      }
    }
    const bool degenerate =
        std::any_of(coverage.data().begin(), coverage.data().end(), [](double v) { return v <= 0.0; });
    if (!degenerate) {
      for (std::size_t p = 0; p < h * w; ++p) weighted[p] /= coverage[p];
      return make_map(std::move(weighted), Method::RISE, c, nullptr);
    }
    stream = derive_seed(stream, 0x7269736552ULL);
  }
  throw DegenerateMasks("some pixels were never unmasked; raise rise_samples or rise_keep_prob");
}

AttributionMap attribute(Method method, const GradientProvider& provider, const Tensor& x,
                         std::size_t c, const MethodConfig& cfg) {
  switch (method) {
    case Method::Saliency: return saliency(provider, x, c);
    case Method::GradientInput: return gradient_input(provider, x, c);
    case Method::IntegratedGradients: return integrated_gradients(provider, x, c, cfg);
    case Method::SmoothGrad: return smoothgrad(provider, x, c, cfg);
    case Method::SquareGrad: return squaregrad(provider, x, c, cfg);
    case Method::VarGrad: return vargrad(provider, x, c, cfg);
    case Method::GuidedBackprop: return guided_backprop(provider, x, c);
    case Method::GradCAM: return gradcam(provider.network(), x, c);
    case Method::Occlusion: return occlusion(provider.network(), x, c, cfg);
    case Method::RISE: return rise(provider.network(), x, c, cfg);
  }
  throw ConfigError("unknown method");
}

}  // namespace forgrad
