#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "forgrad/attribution.hpp"
#include "forgrad/metrics.hpp"

namespace forgrad {

/// Where the low-pass is applied: on every gradient the method consumes, or
/// once on the finished map.
enum class FilterMode { Gradient, Map };

std::string filter_mode_name(FilterMode m);
FilterMode parse_filter_mode(const std::string& s);

AttributionMap attribute_filtered(const Network& net, const Tensor& x, std::size_t c, Method method,
                                  double sigma, FilterMode mode, const MethodConfig& cfg);

/// Strictly descending cutoffs whose first entry is the bypass anchor.
class SigmaGrid {
 public:
  SigmaGrid(std::vector<double> values, std::size_t height, std::size_t width);
  static SigmaGrid default_for(std::size_t height, std::size_t width);

  const std::vector<double>& values() const noexcept { return values_; }
  double bypass() const { return values_.front(); }

 private:
  std::vector<double> values_;
};

enum class Objective { Faithfulness, MuFidelity };

struct SigmaSearchResult {
  double sigma_star = 0.0;
  std::vector<std::pair<double, double>> curve;  // (sigma, mean objective)
  std::size_t n_images = 0;
};

/// Argmax of the mean per-image score over the grid; exact ties go to the
/// larger sigma. `score(sigma, image)` must be pure.
SigmaSearchResult select_sigma(const SigmaGrid& grid, std::size_t n_images,
                               const std::function<double(double, std::size_t)>& score);

struct SigmaSearchOptions {
  Method method = Method::Saliency;
  FilterMode mode = FilterMode::Gradient;
  Objective objective = Objective::Faithfulness;
  MethodConfig method_cfg;
  MetricConfig metric_cfg;
};

SigmaSearchResult sigma_search(const Network& net, const std::vector<Tensor>& images,
                               const std::vector<std::size_t>& classes, const SigmaGrid& grid,
                               const SigmaSearchOptions& opts);

}  // namespace forgrad
