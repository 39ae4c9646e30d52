#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "forgrad/attribution.hpp"
#include "forgrad/filtering.hpp"
#include "forgrad/metrics.hpp"
#include "forgrad/spectral.hpp"

namespace forgrad {

// Taylor approximation -------------------------------------------------------

enum class Control { Zero, Permuted, Uniform, Gaussian2D };
std::string control_name(Control c);
std::vector<Control> all_controls();

/// Gradient substitute for a control, built from the true gradient g.
Tensor control_gradient(Control kind, const Tensor& g, std::uint64_t stream_seed);

/// Per-image first-order residuals. zeta_sigma follows the grid order.
struct TaylorImage {
  double zeta_max = 0.0;
  std::vector<double> zeta_sigma;
  std::vector<double> zeta_control;  // indexed like all_controls()
};
/// Gaussian perturbation with norm epsilon_scale * ||x||.
Tensor taylor_epsilon(const Tensor& x, double epsilon_scale, std::uint64_t seed);

TaylorImage taylor_image(const Network& net, const Tensor& x, const SigmaGrid& grid, double epsilon_scale,
                         std::uint64_t seed);

struct TaylorScale {
  double epsilon_scale = 0.0;
  std::vector<double> filtered;  // mean ratio per grid sigma
  std::vector<double> controls;  // mean ratio per control
  std::size_t n_images = 0;
  std::size_t n_excluded = 0;    // images with zeta_max == 0
};

struct TaylorReport {
  std::vector<double> sigmas;
  std::vector<TaylorScale> scales;
};

TaylorReport experiment_taylor(const Network& net, const std::vector<Tensor>& images, const SigmaGrid& grid,
                               const std::vector<double>& epsilon_scales, std::uint64_t seed);

// Layer-wise slopes ----------------------------------------------------------

/// Layers whose input is a spatial map at least 6 pixels on each side.
std::vector<std::size_t> probe_layers(const Network& net);
/// First pooling layer, whose input gradient is the one shaped by the pool backward.
std::size_t first_pool_layer(const Network& net);

/// Radial signature of d logit_pred / d (input of `layer`) over images and channels.
FourierSignature layer_signature(const Network& net, const std::vector<Tensor>& images, std::size_t layer);

struct LayerSlope {
  std::string variant;
  std::size_t layer = 0;
  std::string kind;
  Shape shape;
  PowerSlope fit;
};

struct LayerSlopeReport {
  std::vector<LayerSlope> rows;
};

LayerSlopeReport experiment_layer_slopes(const std::vector<std::pair<std::string, Network>>& variants,
                                         const std::vector<Tensor>& images);

// Sanity check ---------------------------------------------------------------

struct SanityRow {
  std::size_t depth = 0;  // parameterized layers randomized, counted from the output
  double unfiltered = 0.0;  // mean |Spearman| against the original maps
  double filtered = 0.0;
};

struct SanityReport {
  Method method = Method::Saliency;
  double sigma = 0.0;
  double threshold = 0.2;
  std::vector<SanityRow> rows;
  bool unfiltered_passes = false;  // maps changed under full randomization
  bool filtered_passes = false;
};

SanityReport experiment_sanity(const Network& net, const std::vector<Tensor>& images, Method method, double sigma,
                               std::uint64_t seed, const MethodConfig& cfg = {}, double threshold = 0.2);

// Metric bias ----------------------------------------------------------------

/// A Gaussian blob at a random position and the same values scattered at
/// random positions.
std::pair<Tensor, Tensor> bias_maps(std::size_t height, std::size_t width, std::uint64_t seed, std::size_t index);

struct BiasPair {
  double faithfulness_blob = 0.0;
  double faithfulness_dispersed = 0.0;
  double mu_fidelity_blob = 0.0;
  double mu_fidelity_dispersed = 0.0;
};

struct BiasReport {
  std::vector<BiasPair> pairs;
  double faithfulness_blob = 0.0;
  double faithfulness_dispersed = 0.0;
  double mu_fidelity_blob = 0.0;
  double mu_fidelity_dispersed = 0.0;
};

BiasReport experiment_metric_bias(const Network& net, const std::vector<Tensor>& images, std::size_t n_pairs,
                                  std::uint64_t seed, const MetricConfig& cfg = {});

}  // namespace forgrad
