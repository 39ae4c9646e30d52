#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "forgrad/nn.hpp"
#include "forgrad/tensor.hpp"

namespace forgrad {

enum class BaselineMode { Zero, UniformNoise };

struct MetricConfig {
  std::size_t pixel_step = 16;
  BaselineMode baseline = BaselineMode::Zero;
  std::size_t mufid_subset_size = 32;
  std::size_t mufid_n_subsets = 200;
  double sens_radius = 0.02;  // fraction of the input's dynamic range
  std::size_t sens_n_samples = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Replacement image used by deletion, insertion and muFidelity.
Tensor metric_baseline(const Tensor& x, const MetricConfig& cfg);

/// Pixel indices by descending attribution, ties in row-major order.
std::vector<std::size_t> attribution_order(const Tensor& map);

struct Curve {
  std::vector<double> fraction;
  std::vector<double> probability;
  double auc = 0.0;
};

double trapezoid(std::span<const double> xs, std::span<const double> ys);

/// Softmax probability of class c while the most important pixels are
/// replaced by the baseline.
Curve deletion_curve(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                     const MetricConfig& cfg);
/// Mirror of deletion: starts at the baseline and inserts pixels of x.
Curve insertion_curve(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                      const MetricConfig& cfg);
double deletion(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                const MetricConfig& cfg);
double insertion(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                 const MetricConfig& cfg);

inline double faithfulness_from(double insertion_auc, double deletion_auc) {
  return insertion_auc - deletion_auc;
}
double faithfulness(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                    const MetricConfig& cfg);

/// Pearson correlation between subset attribution sums and the logit drop
/// when the subset is set to the baseline.
double mu_fidelity(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                   const MetricConfig& cfg);

using AttributionFn = std::function<Tensor(const Tensor&)>;

/// Mean relative change of the explanation under uniform input noise.
double sensitivity(const AttributionFn& explain, const Tensor& x, const MetricConfig& cfg);

inline double aggregate_score(double f, double mu_f, double s) { return f + mu_f - s; }

/// Zero when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
/// Pearson on average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

/// Sum that does not depend on the order of the inputs.
double order_invariant_sum(std::vector<double> values);
double order_invariant_mean(std::vector<double> values);

struct ImageMetrics {
  double deletion = 0.0;
  double insertion = 0.0;
  double faithfulness = 0.0;
  double mu_fidelity = 0.0;
  double sensitivity = 0.0;
};

struct MetricResult {
  double deletion = 0.0;
  double insertion = 0.0;
  double faithfulness = 0.0;
  double mu_fidelity = 0.0;
  double sensitivity = 0.0;
  double aggregate = 0.0;
  std::vector<ImageMetrics> per_image;
};

/// Evaluates one explanation. `explain` is used for sensitivity only and may be
/// empty, in which case sensitivity is reported as 0.
ImageMetrics evaluate_image(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                            const AttributionFn& explain, const MetricConfig& cfg);
MetricResult summarize(std::vector<ImageMetrics> per_image);

}  // namespace forgrad
