#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forgrad/nn.hpp"
#include "forgrad/tensor.hpp"

namespace forgrad {

enum class Method {
  Saliency,
  GradientInput,
  IntegratedGradients,
  SmoothGrad,
  SquareGrad,
  VarGrad,
  GuidedBackprop,
  GradCAM,
  Occlusion,
  RISE,
};

enum class Provenance { Unfiltered, GradientFiltered, MapFiltered };

std::string method_name(Method m);
Method parse_method(const std::string& name);
std::vector<Method> all_methods();
std::vector<Method> white_box_methods();
bool is_white_box(Method m);
std::string provenance_name(Provenance p);

struct AttributionMap {
  Tensor values;  // (H,W)
  Method method = Method::Saliency;
  std::size_t target_class = 0;
  std::optional<double> sigma;
  Provenance provenance = Provenance::Unfiltered;
};

/// Source of d logit_c / d x for white-box methods. With a cutoff set, every
/// gradient is low-passed per channel before the caller sees it. Holds a
/// non-owning reference to the network.
class GradientProvider {
 public:
  explicit GradientProvider(const Network& net, ReluMode mode = ReluMode::Standard,
                            std::optional<double> sigma = std::nullopt);

  Tensor gradient(const Tensor& x, std::size_t target_class) const;

  const Network& network() const noexcept { return *net_; }
  ReluMode relu_mode() const noexcept { return mode_; }
  const std::optional<double>& sigma() const noexcept { return sigma_; }
  GradientProvider with_mode(ReluMode mode) const { return GradientProvider(*net_, mode, sigma_); }

 private:
  const Network* net_;
  ReluMode mode_;
  std::optional<double> sigma_;
};

struct MethodConfig {
  std::size_t n_samples = 50;       // SmoothGrad / SquareGrad / VarGrad
  double noise_std = 0.1;           // fraction of the input's dynamic range
  std::size_t ig_steps = 64;
  double ig_baseline = 0.0;
  std::optional<Tensor> ig_baseline_tensor;
  std::size_t occlusion_patch = 4;
  std::size_t occlusion_stride = 4;
  double occlusion_baseline = 0.0;
  bool occlusion_noise_baseline = false;  // uniform(-1,1) instead of the scalar
  std::size_t rise_grid = 7;
  double rise_keep_prob = 0.5;
  std::size_t rise_samples = 4000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean over channels of absolute values: (C,H,W) -> (H,W).
Tensor channel_reduce(const Tensor& signed_grad);

AttributionMap saliency(const GradientProvider& provider, const Tensor& x, std::size_t c);
AttributionMap gradient_input(const GradientProvider& provider, const Tensor& x, std::size_t c);
AttributionMap integrated_gradients(const GradientProvider& provider, const Tensor& x, std::size_t c,
                                    const MethodConfig& cfg);
AttributionMap smoothgrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                          const MethodConfig& cfg);
AttributionMap squaregrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                          const MethodConfig& cfg);
AttributionMap vargrad(const GradientProvider& provider, const Tensor& x, std::size_t c,
                       const MethodConfig& cfg);
AttributionMap guided_backprop(const GradientProvider& provider, const Tensor& x, std::size_t c);

/// Default layer: the last Conv2D.
AttributionMap gradcam(const Network& net, const Tensor& x, std::size_t c,
                       std::optional<std::size_t> conv_layer = std::nullopt);
AttributionMap occlusion(const Network& net, const Tensor& x, std::size_t c, const MethodConfig& cfg);
AttributionMap rise(const Network& net, const Tensor& x, std::size_t c, const MethodConfig& cfg);

/// Dispatch by method. Black-box and GradCAM ignore the provider's filter.
AttributionMap attribute(Method method, const GradientProvider& provider, const Tensor& x,
                         std::size_t c, const MethodConfig& cfg);

// Signed intermediates -------------------------------------------------------

/// (x - b) * mean_k grad(b + k/m (x - b)), k = 1..m; (C,H,W).
Tensor integrated_gradients_signed(const GradientProvider& provider, const Tensor& x, std::size_t c,
                                   const MethodConfig& cfg);
Tensor ig_baseline_for(const Tensor& x, const MethodConfig& cfg);

struct NoisyGradientStats {
  Tensor mean;      // E[g]
  Tensor mean_sq;   // E[g^2]
  Tensor variance;  // E[g^2] - E[g]^2 (population)
};
NoisyGradientStats noisy_gradient_stats(const GradientProvider& provider, const Tensor& x,
                                        std::size_t c, const MethodConfig& cfg);
/// The perturbation added for sample `index` of the noise protocol. Draws
/// depend on (cfg.seed, index) only, so with a fixed seed every method is a
/// deterministic function of its input.
Tensor smoothgrad_noise(const Tensor& x, const MethodConfig& cfg, std::size_t index);

/// Per-input stream seed for metric randomness: mixes the configured seed with
/// the input's bytes so results depend on the image, never on its position in
/// a batch.
std::uint64_t input_seed(std::uint64_t seed, const Tensor& x);

struct GradcamParts {
  Tensor features;  // (K,h,w) activations of the conv layer
  std::vector<double> alpha;
};
GradcamParts gradcam_parts(const Network& net, const Tensor& x, std::size_t c, std::size_t conv_layer);
/// ReLU(sum_k alpha_k A_k), bilinearly resized to (height, width).
Tensor gradcam_from_parts(const GradcamParts& parts, std::size_t height, std::size_t width);
std::size_t last_conv_layer(const Network& net);

/// Half-pixel-center bilinear resize of an (h,w) map, edge-clamped.
Tensor bilinear_resize(const Tensor& map, std::size_t height, std::size_t width);

/// The i-th RISE mask (H,W) for a given stream seed.
Tensor rise_mask(std::size_t height, std::size_t width, const MethodConfig& cfg, std::uint64_t stream_seed,
                 std::size_t index);

}  // namespace forgrad
