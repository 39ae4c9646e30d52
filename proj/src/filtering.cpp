#include "forgrad/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "forgrad/errors.hpp"
#include "forgrad/spectral.hpp"

namespace forgrad {

std::string filter_mode_name(FilterMode m) { return m == FilterMode::Gradient ? "gradient" : "map"; }

FilterMode parse_filter_mode(const std::string& s) {
  if (s == "gradient") return FilterMode::Gradient;
  if (s == "map") return FilterMode::Map;
  throw ConfigError("mode must be 'gradient' or 'map', got '" + s + "'");
}

AttributionMap attribute_filtered(const Network& net, const Tensor& x, std::size_t c, Method method,
                                  double sigma, FilterMode mode, const MethodConfig& cfg) {
  if (!(sigma >= 0.0)) throw NegativeSigma("sigma must be >= 0");
  if (mode == FilterMode::Gradient) {
    if (!is_white_box(method))
      throw UnsupportedMethod(method_name(method) + " consumes no input gradients");
    return attribute(method, GradientProvider(net, ReluMode::Standard, sigma), x, c, cfg);
  }
  AttributionMap map = attribute(method, GradientProvider(net), x, c, cfg);
  map.values = lowpass(map.values, sigma);
  map.sigma = sigma;
  map.provenance = Provenance::MapFiltered;
  return map;
}

SigmaGrid::SigmaGrid(std::vector<double> values, std::size_t height, std::size_t width)
    : values_(std::move(values)) {
  if (values_.empty()) throw ConfigError("sigma grid is empty");
  if (!lowpass_bypassed(height, width, values_.front()))
    throw ConfigError("sigma grid must start at or above min(H,W) (the unfiltered anchor)");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] >= 0.0)) throw NegativeSigma("sigma grid entries must be >= 0");
    if (i && !(values_[i] < values_[i - 1])) throw ConfigError("sigma grid must be strictly descending");
  }
}

SigmaGrid SigmaGrid::default_for(std::size_t height, std::size_t width) {
  const double m = static_cast<double>(std::min(height, width));
  std::vector<double> v;
  for (double f : {28.0, 24.0, 20.0, 16.0, 12.0, 8.0, 6.0, 4.0, 2.0}) {
    const double s = std::round(m * f / 28.0);
    if (v.empty() || s < v.back()) v.push_back(s);
  }
  v.front() = m;
  return SigmaGrid(std::move(v), height, width);
}

SigmaSearchResult select_sigma(const SigmaGrid& grid, std::size_t n_images,
                               const std::function<double(double, std::size_t)>& score) {
  if (n_images == 0) throw EmptyValidationSet("sigma search needs at least one validation image");
  SigmaSearchResult result;
  result.n_images = n_images;
  double best = -std::numeric_limits<double>::infinity();
  for (double sigma : grid.values()) {
    std::vector<double> per_image(n_images);
    for (std::size_t i = 0; i < n_images; ++i) per_image[i] = score(sigma, i);
    const double mean = order_invariant_mean(std::move(per_image));
    result.curve.emplace_back(sigma, mean);
    // grid is descending, so strict '>' keeps the largest sigma among ties
    if (mean > best) {
      best = mean;
      result.sigma_star = sigma;
    }
  }
  return result;
}

SigmaSearchResult sigma_search(const Network& net, const std::vector<Tensor>& images,
                               const std::vector<std::size_t>& classes, const SigmaGrid& grid,
                               const SigmaSearchOptions& opts) {
  if (images.empty()) throw EmptyValidationSet("sigma search needs at least one validation image");
  if (classes.size() != images.size()) throw CountMismatch("one class per validation image is required");
  if (opts.mode == FilterMode::Gradient && !is_white_box(opts.method))
    throw UnsupportedMethod(method_name(opts.method) + " consumes no input gradients");

  std::vector<Tensor> unfiltered;
  if (opts.mode == FilterMode::Map) {
    for (std::size_t i = 0; i < images.size(); ++i)
      unfiltered.push_back(attribute(opts.method, GradientProvider(net), images[i], classes[i], opts.method_cfg).values);
  }
  auto score = [&](double sigma, std::size_t i) {
    const Tensor map = opts.mode == FilterMode::Map
                           ? lowpass(unfiltered[i], sigma)
                           : attribute_filtered(net, images[i], classes[i], opts.method, sigma,
                                                FilterMode::Gradient, opts.method_cfg)
                                 .values;
    return opts.objective == Objective::Faithfulness
               ? faithfulness(net, images[i], map, classes[i], opts.metric_cfg)
               : mu_fidelity(net, images[i], map, classes[i], opts.metric_cfg);
  };
  return select_sigma(grid, images.size(), score);
}

}  // namespace forgrad
