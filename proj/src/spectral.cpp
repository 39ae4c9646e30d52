#include "forgrad/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "forgrad/errors.hpp"

namespace forgrad {

namespace {

// Twiddle table for length n: w[k] = exp(sign * 2*pi*i*k/n).
std::vector<Complex> twiddles(std::size_t n, double sign) {
  std::vector<Complex> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    w[k] = {std::cos(a), std::sin(a)};
  }
  return w;
}

// Separable direct transform: rows then columns, O(HW(H+W)).
std::vector<Complex> transform(const std::vector<Complex>& in, std::size_t h, std::size_t w,
                               double sign) {
  const auto tw_w = twiddles(w, sign);
  const auto tw_h = twiddles(h, sign);
  std::vector<Complex> rows(h * w), out(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const Complex* src = in.data() + r * w;
    for (std::size_t k = 0; k < w; ++k) {
      Complex acc = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < w; ++n) {
        acc += src[n] * tw_w[idx];
        idx += k;
        if (idx >= w) idx -= w;
      }
      rows[r * w + k] = acc;
    }
  }
  std::vector<Complex> col(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) col[r] = rows[r * w + c];
    for (std::size_t k = 0; k < h; ++k) {
      Complex acc = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < h; ++n) {
        acc += col[n] * tw_h[idx];
        idx += k;
        if (idx >= h) idx -= h;
      }
      out[k * w + c] = acc;
    }
  }
  return out;
}

void require_map(const Tensor& map) {
  if (map.rank() != 2) throw ShapeMismatch("expected an (H,W) map, got " + shape_string(map.shape()));
}

// Signed frequency of DFT index k on an axis of length n.
double signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace

Spectrum2D dft2(const Tensor& map) {
  require_map(map);
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::vector<Complex> in(map.data().begin(), map.data().end());
  return {h, w, transform(in, h, w, -1.0), false};
}

std::vector<Complex> idft2(const Spectrum2D& spec) {
  if (spec.centered) return idft2(ifftshift(spec));
  auto out = transform(spec.coeffs, spec.height, spec.width, 1.0);
  const double scale = 1.0 / static_cast<double>(spec.height * spec.width);
  for (auto& c : out) c *= scale;
  return out;
}

Tensor idft2_real(const Spectrum2D& spec) {
  auto field = idft2(spec);
  Tensor out({spec.height, spec.width});
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i].real();
  return out;
}

Spectrum2D fftshift(const Spectrum2D& spec) {
  if (spec.centered) throw AlreadyCentered("spectrum is already centered");
  Spectrum2D out{spec.height, spec.width, std::vector<Complex>(spec.coeffs.size()), true};
  const std::size_t h = spec.height, w = spec.width;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      out.at((u + h / 2) % h, (v + w / 2) % w) = spec.at(u, v);
  return out;
}

Spectrum2D ifftshift(const Spectrum2D& spec) {
  if (!spec.centered) throw ValidationError("spectrum is not centered");
  Spectrum2D out{spec.height, spec.width, std::vector<Complex>(spec.coeffs.size()), false};
  const std::size_t h = spec.height, w = spec.width;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      out.at(u, v) = spec.at((u + h / 2) % h, (v + w / 2) % w);
  return out;
}

void SignatureAccumulator::add(const Tensor& map) {
  require_map(map);
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (n_ == 0) {
    height_ = h;
    width_ = w;
    max_radius_ = std::min(h, w) / 2;
    bin_.assign(h * w, -1);
    bin_count_.assign(max_radius_ + 1, 0);
    sum_.assign(max_radius_ + 1, 0.0);
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        const double du = static_cast<double>(u) - static_cast<double>(h / 2);
        const double dv = static_cast<double>(v) - static_cast<double>(w / 2);
        const auto r = static_cast<std::size_t>(std::lround(std::sqrt(du * du + dv * dv)));
        if (r <= max_radius_) {
          bin_[u * w + v] = static_cast<int>(r);
          ++bin_count_[r];
        }
      }
    }
  } else if (h != height_ || w != width_) {
    throw ShapeMismatch("all maps in a signature must share one shape");
  }
  const Spectrum2D centered = fftshift(dft2(map));
  std::vector<double> acc(max_radius_ + 1, 0.0);
  for (std::size_t i = 0; i < centered.coeffs.size(); ++i)
    if (bin_[i] >= 0) acc[static_cast<std::size_t>(bin_[i])] += std::abs(centered.coeffs[i]);
  for (std::size_t r = 0; r <= max_radius_; ++r) sum_[r] += acc[r] / static_cast<double>(bin_count_[r]);
  ++n_;
}

FourierSignature SignatureAccumulator::result() const {
  if (n_ == 0) throw EmptyInput("no maps were accumulated");
  FourierSignature sig;
  sig.n_images = n_;
  for (std::size_t r = 0; r <= max_radius_; ++r) {
    sig.radii.push_back(r);
    sig.amplitude.push_back(sum_[r] / static_cast<double>(n_));
  }
  return sig;
}

FourierSignature radial_signature(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw EmptyInput("radial_signature needs at least one map");
  SignatureAccumulator acc;
  for (const auto& m : maps) acc.add(m);
  return acc.result();
}

PowerSlope power_slope(const FourierSignature& sig) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < sig.radii.size(); ++i) {
    if (sig.radii[i] == 0 || !(sig.amplitude[i] > 0.0)) continue;
    xs.push_back(static_cast<double>(sig.radii[i]));
    ys.push_back(std::log10(sig.amplitude[i]));
  }
  if (xs.size() < 3) throw InsufficientBins("need at least 3 nonzero bins beyond DC");
  // Fit on y - y0 so that a flat profile yields an exactly zero slope.
  const double y0 = ys.front();
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i] - y0;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - y0 - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  PowerSlope out;
  out.slope = sxy / sxx;
  out.intercept = my + y0 - out.slope * mx;
  if (syy == 0.0) {
    out.r_squared = 1.0;
  } else {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = ys[i] - (out.intercept + out.slope * xs[i]);
      ss_res += e * e;
    }
    out.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return out;
}

bool lowpass_bypassed(std::size_t height, std::size_t width, double sigma) {
  return sigma >= static_cast<double>(std::min(height, width));
}

LowpassResult lowpass_detailed(const Tensor& map, double sigma) {
  require_map(map);
  if (!(sigma >= 0.0)) throw NegativeSigma("sigma must be >= 0");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (lowpass_bypassed(h, w, sigma)) return {map, 0.0};
  Spectrum2D spec = dft2(map);
  const double r2max = sigma * sigma / 4.0;
  for (std::size_t u = 0; u < h; ++u) {
    const double fu = signed_freq(u, h);
    for (std::size_t v = 0; v < w; ++v) {
      const double fv = signed_freq(v, w);
      if (fu * fu + fv * fv > r2max) spec.at(u, v) = 0.0;
    }
  }
  const auto field = idft2(spec);
  LowpassResult out{Tensor({h, w}), 0.0};
  for (std::size_t i = 0; i < field.size(); ++i) {
    out.values[i] = field[i].real();
    out.max_imag = std::max(out.max_imag, std::abs(field[i].imag()));
  }
  return out;
}

Tensor lowpass(const Tensor& map, double sigma) { return lowpass_detailed(map, sigma).values; }

Tensor lowpass_channels(const Tensor& chw, double sigma) {
  if (chw.rank() != 3) throw ShapeMismatch("expected a (C,H,W) tensor");
  if (!(sigma >= 0.0)) throw NegativeSigma("sigma must be >= 0");
  if (lowpass_bypassed(chw.dim(1), chw.dim(2), sigma)) return chw;
  Tensor out(chw.shape());
  for (std::size_t c = 0; c < chw.dim(0); ++c) out.set_channel(c, lowpass(chw.channel(c), sigma));
  return out;
}

}  // namespace forgrad
