#include "forgrad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "forgrad/attribution.hpp"
#include "forgrad/errors.hpp"
#include "forgrad/rng.hpp"

namespace forgrad {

void MetricConfig::validate() const {
  if (pixel_step < 1) throw ConfigError("pixel_step must be >= 1");
  if (mufid_n_subsets < 2) throw ConfigError("mufid_n_subsets must be >= 2");
  if (sens_n_samples < 1) throw ConfigError("sens_n_samples must be >= 1");
  if (!(sens_radius >= 0.0)) throw ConfigError("sens_radius must be >= 0");
}

Tensor metric_baseline(const Tensor& x, const MetricConfig& cfg) {
  Tensor b(x.shape());
  if (cfg.baseline == BaselineMode::UniformNoise) {
    Rng rng = make_rng(input_seed(cfg.seed, x), 0x62617365ULL);
    for (auto& v : b.data()) v = uniform(rng, -1.0, 1.0);
  }
  return b;
}

std::vector<std::size_t> attribution_order(const Tensor& map) {
  std::vector<std::size_t> idx(map.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });
  return idx;
}

double trapezoid(std::span<const double> xs, std::span<const double> ys) {
  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) area += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
  return area;
}

namespace {

void check_map(const Network& net, const Tensor& x, const Tensor& map, std::size_t c) {
  if (x.shape() != net.input_shape()) throw ShapeMismatch("input does not match the network");
  if (map.shape() != Shape{x.dim(1), x.dim(2)})
    throw ShapeMismatch("map " + shape_string(map.shape()) + " does not match input " + shape_string(x.shape()));
  if (c >= net.num_classes()) throw ValidationError("target class out of range");
}

// Walks the ranking in pixel_step chunks, copying pixels of `source` into
// `canvas`, and records the class probability at every stage.
Curve progressive_curve(const Network& net, Tensor canvas, const Tensor& source, const Tensor& map,
                        std::size_t c, const MetricConfig& cfg) {
  cfg.validate();
  const auto order = attribution_order(map);
  const std::size_t n = order.size(), channels = canvas.dim(0), plane = n;
  Curve curve;
  std::size_t done = 0;
  auto record = [&] {
    curve.fraction.push_back(static_cast<double>(done) / static_cast<double>(n));
    curve.probability.push_back(forward(net, canvas).probabilities[c]);
  };
  record();
  while (done < n) {
    const std::size_t next = std::min(n, done + cfg.pixel_step);
    for (std::size_t i = done; i < next; ++i)
      for (std::size_t k = 0; k < channels; ++k) canvas[k * plane + order[i]] = source[k * plane + order[i]];
    done = next;
    record();
  }
  curve.auc = trapezoid(curve.fraction, curve.probability);
  return curve;
}

}  // namespace

Curve deletion_curve(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                     const MetricConfig& cfg) {
  check_map(net, x, map, c);
  return progressive_curve(net, x, metric_baseline(x, cfg), map, c, cfg);
}

Curve insertion_curve(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                      const MetricConfig& cfg) {
  check_map(net, x, map, c);
  return progressive_curve(net, metric_baseline(x, cfg), x, map, c, cfg);
}

double deletion(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                const MetricConfig& cfg) {
  return deletion_curve(net, x, map, c, cfg).auc;
}

double insertion(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                 const MetricConfig& cfg) {
  return insertion_curve(net, x, map, c, cfg).auc;
}

double faithfulness(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                    const MetricConfig& cfg) {
  return faithfulness_from(insertion(net, x, map, c, cfg), deletion(net, x, map, c, cfg));
}

double mu_fidelity(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                   const MetricConfig& cfg) {
  check_map(net, x, map, c);
  cfg.validate();
  const std::size_t n = map.size(), k = cfg.mufid_subset_size, channels = x.dim(0);
  if (k == 0 || k >= n) throw DegenerateSubsetSize("subset size must lie in [1, H*W)");
  const Tensor baseline = metric_baseline(x, cfg);
  const double reference = forward(net, x).logits[c];
  const std::uint64_t stream = input_seed(cfg.seed, x);
  std::vector<double> sums(cfg.mufid_n_subsets), drops(cfg.mufid_n_subsets);
  std::vector<std::size_t> pool(n);
  for (std::size_t s = 0; s < cfg.mufid_n_subsets; ++s) {
    Rng rng = make_rng(stream, s);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
    Tensor perturbed = x;
    double attr = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t p = pool[i];
      attr += map[p];
      for (std::size_t ch = 0; ch < channels; ++ch) perturbed[ch * n + p] = baseline[ch * n + p];
    }
    sums[s] = attr;
    drops[s] = reference - forward(net, perturbed).logits[c];
  }
  return pearson(sums, drops);
}

double sensitivity(const AttributionFn& explain, const Tensor& x, const MetricConfig& cfg) {
  cfg.validate();
  const Tensor base = explain(x);
  const double norm = base.norm2();
  if (norm == 0.0) return 0.0;
  const double r = cfg.sens_radius * (x.max() - x.min());
  const std::uint64_t stream = input_seed(cfg.seed, x);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < cfg.sens_n_samples; ++i) {
    Rng rng = make_rng(stream, 0x73656e73ULL + i);
    Tensor noisy = x;
    for (auto& v : noisy.data()) v += uniform(rng, -r, r);
    ratios.push_back((explain(noisy) - base).norm2() / norm);
  }
  double s = 0.0;
  for (double v : ratios) s += v;
  return s / static_cast<double>(ratios.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("pearson needs two equal series of length >= 2");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(a) || constant(b)) return 0.0;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {
std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a), rb = average_ranks(b);
  return pearson(ra, rb);
}

double order_invariant_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double order_invariant_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  return order_invariant_sum(std::move(values)) / n;
}

ImageMetrics evaluate_image(const Network& net, const Tensor& x, const Tensor& map, std::size_t c,
                            const AttributionFn& explain, const MetricConfig& cfg) {
  ImageMetrics m;
  m.deletion = deletion(net, x, map, c, cfg);
  m.insertion = insertion(net, x, map, c, cfg);
  m.faithfulness = faithfulness_from(m.insertion, m.deletion);
  m.mu_fidelity = mu_fidelity(net, x, map, c, cfg);
  m.sensitivity = explain ? sensitivity(explain, x, cfg) : 0.0;
  return m;
}

MetricResult summarize(std::vector<ImageMetrics> per_image) {
  MetricResult r;
  auto mean_of = [&](double ImageMetrics::*field) {
    std::vector<double> v;
    v.reserve(per_image.size());
    for (const auto& m : per_image) v.push_back(m.*field);
    return order_invariant_mean(std::move(v));
  };
  r.deletion = mean_of(&ImageMetrics::deletion);
  r.insertion = mean_of(&ImageMetrics::insertion);
  r.faithfulness = mean_of(&ImageMetrics::faithfulness);
  r.mu_fidelity = mean_of(&ImageMetrics::mu_fidelity);
  r.sensitivity = mean_of(&ImageMetrics::sensitivity);
  r.aggregate = aggregate_score(r.faithfulness, r.mu_fidelity, r.sensitivity);
  r.per_image = std::move(per_image);
  return r;
}

}  // namespace forgrad
