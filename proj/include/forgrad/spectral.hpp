#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "forgrad/tensor.hpp"

namespace forgrad {

using Complex = std::complex<double>;

/// Row-major 2D spectrum. `centered` marks the DC-at-(H/2, W/2) layout.
struct Spectrum2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> coeffs;
  bool centered = false;

  Complex& at(std::size_t u, std::size_t v) { return coeffs[u * width + v]; }
  const Complex& at(std::size_t u, std::size_t v) const { return coeffs[u * width + v]; }
};

/// Unnormalized forward DFT of an (H,W) map.
Spectrum2D dft2(const Tensor& map);
/// Inverse DFT scaled by 1/(HW); returns the complex field.
std::vector<Complex> idft2(const Spectrum2D& spec);
Tensor idft2_real(const Spectrum2D& spec);

Spectrum2D fftshift(const Spectrum2D& spec);
Spectrum2D ifftshift(const Spectrum2D& spec);

struct FourierSignature {
  std::vector<std::size_t> radii;
  std::vector<double> amplitude;
  std::size_t n_images = 0;
};

/// Streaming circular average: add maps one at a time, read the mean
/// signature at the end. All maps must share one shape.
class SignatureAccumulator {
 public:
  void add(const Tensor& map);
  std::size_t count() const noexcept { return n_; }
  FourierSignature result() const;

 private:
  std::size_t height_ = 0, width_ = 0, max_radius_ = 0;
  std::vector<int> bin_;            // radius bin per centered coefficient, -1 if discarded
  std::vector<std::size_t> bin_count_;
  std::vector<double> sum_;         // sum over images of per-bin mean amplitude
  std::size_t n_ = 0;
};

FourierSignature radial_signature(const std::vector<Tensor>& maps);

struct PowerSlope {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares fit of log10(amplitude) against radius, R >= 1, zero bins skipped.
PowerSlope power_slope(const FourierSignature& sig);

struct LowpassResult {
  Tensor values;
  double max_imag = 0.0;  // largest discarded imaginary residual
};

/// Ideal circular low-pass keeping radius <= sigma/2 (sigma is a pass-band
/// diameter in cycles/image). sigma >= min(H,W) returns the input unchanged.
LowpassResult lowpass_detailed(const Tensor& map, double sigma);
Tensor lowpass(const Tensor& map, double sigma);
/// Channel-wise lowpass of a (C,H,W) tensor.
Tensor lowpass_channels(const Tensor& chw, double sigma);

bool lowpass_bypassed(std::size_t height, std::size_t width, double sigma);

}  // namespace forgrad
