#include "forgrad/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "forgrad/errors.hpp"
#include "forgrad/rng.hpp"

namespace forgrad {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::Dense: return "Dense";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::AvgPool2D: return "AvgPool2D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

LayerSpec LayerSpec::conv(std::uint32_t kernel, std::uint32_t channels, std::uint32_t stride,
                          Padding padding) {
  return {LayerKind::Conv2D, kernel, stride, channels, padding};
}
LayerSpec LayerSpec::dense(std::uint32_t units) { return {LayerKind::Dense, 1, 1, units, Padding::Valid}; }
LayerSpec LayerSpec::relu() { return {LayerKind::ReLU, 1, 1, 0, Padding::Valid}; }
LayerSpec LayerSpec::max_pool(std::uint32_t kernel, std::uint32_t stride) {
  return {LayerKind::MaxPool2D, kernel, stride, 0, Padding::Valid};
}
LayerSpec LayerSpec::avg_pool(std::uint32_t kernel, std::uint32_t stride) {
  return {LayerKind::AvgPool2D, kernel, stride, 0, Padding::Valid};
}
LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten, 1, 1, 0, Padding::Valid}; }
LayerSpec LayerSpec::softmax() { return {LayerKind::Softmax, 1, 1, 0, Padding::Valid}; }

namespace {

struct ConvGeometry {
  std::size_t out_h, out_w, pad_top, pad_left;
};

ConvGeometry conv_geometry(const LayerSpec& spec, std::size_t h, std::size_t w) {
  const std::size_t k = spec.kernel_size, s = spec.stride;
  if (spec.padding == Padding::Same) {
    const std::size_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
    const std::size_t ph = (oh - 1) * s + k > h ? (oh - 1) * s + k - h : 0;
    const std::size_t pw = (ow - 1) * s + k > w ? (ow - 1) * s + k - w : 0;
    return {oh, ow, ph / 2, pw / 2};
  }
  if (k > h || k > w) throw ValidationError("kernel larger than input");
  return {(h - k) / s + 1, (w - k) / s + 1, 0, 0};
}

// Output positions [lo, hi) whose tap at `offset` lands inside [0, n).
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t offset, std::size_t pad, std::size_t stride, std::size_t n, std::size_t out) {
  if (offset >= pad + n) return {0, 0};
  const std::size_t lo = offset >= pad ? 0 : (pad - offset + stride - 1) / stride;
  const std::size_t hi = std::min(out, (n - 1 + pad - offset) / stride + 1);
  return {lo, std::max(lo, hi)};
}

std::string layer_param_name(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  if (spec.stride < 1 || spec.kernel_size < 1)
    throw ValidationError("stride and kernel_size must be >= 1");
  switch (spec.kind) {
    case LayerKind::Conv2D: {
      if (in.size() != 3) throw ValidationError("Conv2D expects (C,H,W), got " + shape_string(in));
      if (spec.channels_out == 0) throw ValidationError("Conv2D needs channels_out >= 1");
      auto g = conv_geometry(spec, in[1], in[2]);
      return {spec.channels_out, g.out_h, g.out_w};
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D: {
      if (in.size() != 3) throw ValidationError("pooling expects (C,H,W), got " + shape_string(in));
      if (spec.padding != Padding::Valid) throw ValidationError("pooling supports valid padding only");
      auto g = conv_geometry(spec, in[1], in[2]);
      return {in[0], g.out_h, g.out_w};
    }
    case LayerKind::Dense:
      if (in.size() != 1) throw ValidationError("Dense expects a flat vector, got " + shape_string(in));
      if (spec.channels_out == 0) throw ValidationError("Dense needs channels_out >= 1");
      return {spec.channels_out};
    case LayerKind::Flatten: return {shape_size(in)};
    case LayerKind::ReLU:
    case LayerKind::Softmax: return in;
  }
  throw ValidationError("unknown layer kind");
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers,
                 const std::map<std::string, Tensor>& params)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  weights_.resize(layers_.size());
  biases_.resize(layers_.size());
  validate_and_index();
  std::size_t used = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].has_params()) continue;
    auto w = params.find(layer_param_name(i, "weight"));
    auto b = params.find(layer_param_name(i, "bias"));
    if (w == params.end() || b == params.end())
      throw ValidationError("missing parameters for layer " + std::to_string(i));
    const Shape& in = shapes_[i];
    const LayerSpec& L = layers_[i];
    Shape wshape = L.kind == LayerKind::Conv2D
                       ? Shape{L.channels_out, in[0], L.kernel_size, L.kernel_size}
                       : Shape{L.channels_out, in[0]};
    if (w->second.shape() != wshape || b->second.shape() != Shape{L.channels_out})
      throw ValidationError("parameter shape mismatch at layer " + std::to_string(i) + ": weight " +
                            shape_string(w->second.shape()) + ", expected " + shape_string(wshape));
    if (!w->second.all_finite() || !b->second.all_finite())
      throw NonFinite("non-finite parameters at layer " + std::to_string(i));
    weights_[i] = w->second;
    biases_[i] = b->second;
    used += 2;
  }
  if (used != params.size()) throw ValidationError("unexpected extra parameter tensors");
}

void Network::validate_and_index() {
  if (input_shape_.size() != 3) throw ValidationError("input shape must be (C,H,W)");
  for (auto d : input_shape_)
    if (d == 0) throw ValidationError("input shape has a zero dimension");
  if (layers_.empty()) throw ValidationError("network has no layers");
  shapes_.clear();
  shapes_.push_back(input_shape_);
  logits_end_ = layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::Softmax) {
      if (i + 1 != layers_.size()) throw ValidationError("Softmax must be the final layer");
      logits_end_ = i;
    }
    shapes_.push_back(layer_output_shape(layers_[i], shapes_.back()));
  }
  if (shapes_.back().size() != 1) throw ValidationError("final layer must produce a class vector");
  num_classes_ = shapes_.back()[0];
}

Network Network::initialized(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed) {
  Network net;
  net.input_shape_ = std::move(input_shape);
  net.layers_ = std::move(layers);
  net.weights_.resize(net.layers_.size());
  net.biases_.resize(net.layers_.size());
  net.validate_and_index();
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    const LayerSpec& L = net.layers_[i];
    if (!L.has_params()) continue;
    const Shape& in = net.shapes_[i];
    Shape wshape = L.kind == LayerKind::Conv2D ? Shape{L.channels_out, in[0], L.kernel_size, L.kernel_size}
                                               : Shape{L.channels_out, in[0]};
    const double fan_in = static_cast<double>(shape_size(wshape) / L.channels_out);
    const double stddev = std::sqrt(2.0 / fan_in);
    Rng rng = make_rng(seed, i);
    Tensor w(wshape);
    for (auto& v : w.data()) v = stddev * normal01(rng);
    net.weights_[i] = std::move(w);
    net.biases_[i] = Tensor({L.channels_out}, 0.0);
  }
  return net;
}

std::map<std::string, Tensor> Network::params() const {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].has_params()) continue;
    out.emplace(layer_param_name(i, "weight"), weights_[i]);
    out.emplace(layer_param_name(i, "bias"), biases_[i]);
  }
  return out;
}

std::vector<std::size_t> Network::parameterized_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].has_params()) out.push_back(i);
  return out;
}

Network Network::with_params(std::size_t layer, Tensor weight, Tensor bias) const {
  if (layer >= layers_.size() || !layers_[layer].has_params())
    throw ValidationError("layer " + std::to_string(layer) + " has no parameters");
  if (weight.shape() != weights_[layer].shape() || bias.shape() != biases_[layer].shape())
    throw ShapeMismatch("replacement parameters have the wrong shape");
  Network copy = *this;
  copy.weights_[layer] = std::move(weight);
  copy.biases_[layer] = std::move(bias);
  return copy;
}

std::uint64_t Network::hash() const {
  auto bytes = serialize(*this);
  return fnv1a(bytes);
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

Tensor conv_forward(const LayerSpec& L, const Tensor& in, const Tensor& w, const Tensor& b) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const auto g = conv_geometry(L, h, wd);
  const std::size_t k = L.kernel_size, s = L.stride, cout = L.channels_out;
  Tensor out({cout, g.out_h, g.out_w});
  const double* ip = in.data().data();
  const double* wp = w.data().data();
  double* op = out.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* oplane = op + co * g.out_h * g.out_w;
    std::fill(oplane, oplane + g.out_h * g.out_w, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* iplane = ip + ci * h * wd;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto ry = tap_range(ky, g.pad_top, s, h, g.out_h);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wp[((co * cin + ci) * k + ky) * k + kx];
          const auto rx = tap_range(kx, g.pad_left, s, wd, g.out_w);
          const std::size_t n = rx.hi - rx.lo;
          if (n == 0) continue;
          const std::size_t ix0 = rx.lo * s + kx - g.pad_left;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const double* irow = iplane + (oy * s + ky - g.pad_top) * wd + ix0;
            double* orow = oplane + oy * g.out_w + rx.lo;
            if (s == 1) {
              for (std::size_t j = 0; j < n; ++j) orow[j] += wv * irow[j];
            } else {
              for (std::size_t j = 0; j < n; ++j) orow[j] += wv * irow[j * s];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv_backward(const LayerSpec& L, const Tensor& in, const Tensor& w, const Tensor& dout,
                     Tensor* dw, Tensor* db) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const auto g = conv_geometry(L, h, wd);
  const std::size_t k = L.kernel_size, s = L.stride, cout = L.channels_out;
  Tensor din(in.shape());
  const double* ip = in.data().data();
  const double* wp = w.data().data();
  const double* gp = dout.data().data();
  double* dp = din.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    const double* gplane = gp + co * g.out_h * g.out_w;
    if (db) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.out_h * g.out_w; ++i) acc += gplane[i];
      (*db)[co] += acc;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* iplane = ip + ci * h * wd;
      double* dplane = dp + ci * h * wd;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto ry = tap_range(ky, g.pad_top, s, h, g.out_h);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
          const double wv = wp[widx];
          const auto rx = tap_range(kx, g.pad_left, s, wd, g.out_w);
          const std::size_t n = rx.hi - rx.lo;
          if (n == 0) continue;
          const std::size_t ix0 = rx.lo * s + kx - g.pad_left;
          double wacc = 0.0;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const std::size_t off = (oy * s + ky - g.pad_top) * wd + ix0;
            const double* grow = gplane + oy * g.out_w + rx.lo;
            const double* irow = iplane + off;
            double* drow = dplane + off;
            for (std::size_t j = 0; j < n; ++j) {
              drow[j * s] += wv * grow[j];
              wacc += grow[j] * irow[j * s];
            }
          }
          if (dw) (*dw)[widx] += wacc;
        }
      }
    }
  }
  return din;
}

Tensor dense_forward(const Tensor& in, const Tensor& w, const Tensor& b) {
  const std::size_t nout = w.dim(0), nin = w.dim(1);
  Tensor out({nout});
  for (std::size_t o = 0; o < nout; ++o) {
    double acc = b[o];
    const double* row = w.data().data() + o * nin;
    for (std::size_t i = 0; i < nin; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
  return out;
}

Tensor dense_backward(const Tensor& in, const Tensor& w, const Tensor& dout, Tensor* dw, Tensor* db) {
  const std::size_t nout = w.dim(0), nin = w.dim(1);
  Tensor din({nin});
  for (std::size_t o = 0; o < nout; ++o) {
    const double g = dout[o];
    if (g == 0.0 && !dw) continue;
    const double* row = w.data().data() + o * nin;
    for (std::size_t i = 0; i < nin; ++i) din[i] += row[i] * g;
    if (dw) {
      double* drow = dw->data().data() + o * nin;
      for (std::size_t i = 0; i < nin; ++i) drow[i] += g * in[i];
    }
    if (db) (*db)[o] += g;
  }
  return din;
}

Tensor pool_forward(const LayerSpec& L, const Tensor& in, std::vector<std::uint32_t>* argmax) {
  const std::size_t c = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const auto g = conv_geometry(L, h, wd);
  const std::size_t k = L.kernel_size, s = L.stride;
  const bool is_max = L.kind == LayerKind::MaxPool2D;
  Tensor out({c, g.out_h, g.out_w});
  if (argmax) argmax->assign(out.size(), 0);
  const double inv = 1.0 / static_cast<double>(k * k);
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (ch * h + oy * s + ky) * wd + ox * s + kx;
            const double v = in[idx];
            if (is_max) {
              // strict '>' keeps the first maximal element in row-major order
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            } else {
              acc += v;
            }
          }
        }
        if (is_max) {
          out[o] = best;
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_idx);
        } else {
          out[o] = acc * inv;
        }
      }
    }
  }
  return out;
}

void check_finite(const Tensor& t, std::size_t layer) {
  if (!t.all_finite()) throw NonFinite("non-finite activation after layer " + std::to_string(layer));
}

Tensor apply_layer(const Network& net, std::size_t i, const Tensor& in,
                   std::vector<std::uint32_t>* argmax) {
  const LayerSpec& L = net.layers()[i];
  switch (L.kind) {
    case LayerKind::Conv2D: return conv_forward(L, in, net.weight(i), net.bias(i));
    case LayerKind::Dense: return dense_forward(in, net.weight(i), net.bias(i));
    case LayerKind::ReLU: {
      Tensor out = in;
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D: return pool_forward(L, in, argmax);
    case LayerKind::Flatten: return in.reshaped({in.size()});
    case LayerKind::Softmax: return softmax(in);
  }
  throw ValidationError("unknown layer kind");
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  const double m = logits.max();
  double z = 0.0;
  for (auto& v : p.data()) {
    v = std::exp(v - m);
    z += v;
  }
  for (auto& v : p.data()) v /= z;
  return p;
}

std::size_t argmax_class(const Tensor& scores) {
  return static_cast<std::size_t>(
      std::distance(scores.data().begin(), std::max_element(scores.data().begin(), scores.data().end())));
}

ForwardCache forward(const Network& net, const Tensor& x) {
  if (x.shape() != net.input_shape())
    throw ShapeMismatch("input " + shape_string(x.shape()) + " vs network input " +
                        shape_string(net.input_shape()));
  if (!x.all_finite()) throw NonFinite("non-finite network input");
  const std::size_t end = net.logits_layer_end();
  ForwardCache cache;
  cache.inputs.reserve(end);
  cache.argmax.resize(end);
  Tensor act = x;
  for (std::size_t i = 0; i < end; ++i) {
    const bool is_max = net.layers()[i].kind == LayerKind::MaxPool2D;
    Tensor next = apply_layer(net, i, act, is_max ? &cache.argmax[i] : nullptr);
    check_finite(next, i);
    cache.inputs.push_back(std::move(act));
    act = std::move(next);
  }
  cache.probabilities = softmax(act);
  cache.logits = std::move(act);
  return cache;
}

Tensor forward_from(const Network& net, std::size_t from_layer, const Tensor& activation) {
  const std::size_t end = net.logits_layer_end();
  if (from_layer > end) throw ValidationError("from_layer beyond the logits layer");
  if (activation.shape() != net.activation_shape(from_layer))
    throw ShapeMismatch("activation " + shape_string(activation.shape()) + " does not feed layer " +
                        std::to_string(from_layer));
  Tensor act = activation;
  for (std::size_t i = from_layer; i < end; ++i) {
    act = apply_layer(net, i, act, nullptr);
    check_finite(act, i);
  }
  return act;
}

Tensor max_pool_backward(const Tensor& pool_input, std::span<const std::uint32_t> argmax,
                         const Tensor& upstream) {
  if (argmax.size() != upstream.size())
    throw ShapeMismatch("argmax and upstream sizes differ");
  Tensor din(pool_input.shape());
  for (std::size_t o = 0; o < upstream.size(); ++o) {
    if (argmax[o] >= din.size()) throw ShapeMismatch("argmax index outside the pool input");
    din[argmax[o]] += upstream[o];
  }
  return din;
}

Tensor avg_pool_backward(const Tensor& upstream, const Shape& input_shape, std::uint32_t kernel,
                         std::uint32_t stride) {
  const LayerSpec L = LayerSpec::avg_pool(kernel, stride);
  if (layer_output_shape(L, input_shape) != upstream.shape())
    throw ShapeMismatch("upstream " + shape_string(upstream.shape()) + " does not match pooled " +
                        shape_string(input_shape));
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  const std::size_t oh = upstream.dim(1), ow = upstream.dim(2);
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  Tensor din(input_shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = upstream.at(ch, oy, ox) * inv;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx)
            din[(ch * h + oy * stride + ky) * w + ox * stride + kx] += g;
      }
  return din;
}

Tensor backward(const Network& net, const ForwardCache& cache, const Tensor& logit_cotangent,
                ReluMode mode, std::size_t stop_layer, ParamGrads* grads) {
  const std::size_t end = net.logits_layer_end();
  if (cache.inputs.size() != end || cache.argmax.size() != end ||
      cache.logits.shape() != net.activation_shape(end))
    throw StaleCache("cache layer count does not match the network");
  for (std::size_t i = 0; i < end; ++i)
    if (cache.inputs[i].shape() != net.activation_shape(i))
      throw StaleCache("cached activation " + std::to_string(i) + " has the wrong shape");
  if (logit_cotangent.shape() != cache.logits.shape())
    throw ShapeMismatch("cotangent must match the logits shape");
  if (stop_layer > end) throw ValidationError("stop_layer beyond the logits layer");

  Tensor g = logit_cotangent;
  for (std::size_t i = end; i-- > stop_layer;) {
    const LayerSpec& L = net.layers()[i];
    const Tensor& in = cache.inputs[i];
    switch (L.kind) {
      case LayerKind::Conv2D:
        g = conv_backward(L, in, net.weight(i), g, grads ? &grads->weights[i] : nullptr,
                          grads ? &grads->biases[i] : nullptr);
        break;
      case LayerKind::Dense:
        g = dense_backward(in, net.weight(i), g, grads ? &grads->weights[i] : nullptr,
                           grads ? &grads->biases[i] : nullptr);
        break;
      case LayerKind::ReLU:
        for (std::size_t j = 0; j < g.size(); ++j) {
          const bool pass = in[j] > 0.0 && (mode == ReluMode::Standard || g[j] > 0.0);
          if (!pass) g[j] = 0.0;
        }
        break;
      case LayerKind::MaxPool2D: g = max_pool_backward(in, cache.argmax[i], g); break;
      case LayerKind::AvgPool2D: g = avg_pool_backward(g, in.shape(), L.kernel_size, L.stride); break;
      case LayerKind::Flatten: g = g.reshaped(in.shape()); break;
      case LayerKind::Softmax: break;  // never reached: logits precede softmax
    }
  }
  return g;
}

Tensor backward_to_layer(const Network& net, const ForwardCache& cache, std::size_t target_class,
                         std::size_t stop_layer, ReluMode mode) {
  if (target_class >= net.num_classes())
    throw ValidationError("target class " + std::to_string(target_class) + " out of range");
  Tensor seed(net.activation_shape(net.logits_layer_end()));
  seed[target_class] = 1.0;
  return backward(net, cache, seed, mode, stop_layer, nullptr);
}

Tensor backward_input(const Network& net, const ForwardCache& cache, std::size_t target_class,
                      ReluMode mode) {
  return backward_to_layer(net, cache, target_class, 0, mode);
}

// ---------------------------------------------------------------------------
// Training

double accuracy(const Network& net, std::span<const Tensor> images,
                std::span<const std::size_t> labels) {
  if (images.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    correct += argmax_class(forward(net, images[i]).logits) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainResult train(const Network& net, std::span<const Tensor> images,
                  std::span<const std::size_t> labels, const TrainConfig& cfg) {
  if (images.empty()) throw ValidationError("training set is empty");
  if (images.size() != labels.size()) throw CountMismatch("images and labels differ in count");
  if (!(cfg.learning_rate >= 0.0) || cfg.batch_size == 0)
    throw ConfigError("learning_rate must be >= 0 and batch_size >= 1");
  for (auto l : labels)
    if (l >= net.num_classes()) throw ValidationError("label out of range");

  auto params = net.params();
  Network cur = net;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  const auto param_layers = net.parameterized_layers();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      ParamGrads grads;
      grads.weights.resize(cur.layers().size());
      grads.biases.resize(cur.layers().size());
      for (auto li : param_layers) {
        grads.weights[li] = Tensor(cur.weight(li).shape());
        grads.biases[li] = Tensor(cur.bias(li).shape());
      }
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        ForwardCache cache = forward(cur, images[idx]);
        const Tensor& z = cache.logits;
        const double m = z.max();
        double lse = 0.0;
        for (double v : z.data()) lse += std::exp(v - m);
        const double loss = m + std::log(lse) - z[labels[idx]];
        if (!std::isfinite(loss))
          throw Divergence("loss became non-finite at epoch " + std::to_string(epoch));
        epoch_loss += loss;
        Tensor cot = cache.probabilities;
        cot[labels[idx]] -= 1.0;
        for (auto& v : cot.data()) v *= scale;
        backward(cur, cache, cot, ReluMode::Standard, 0, &grads);
      }
      for (auto li : param_layers) {
        Tensor w = cur.weight(li), bb = cur.bias(li);
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.learning_rate * grads.weights[li][j];
        for (std::size_t j = 0; j < bb.size(); ++j) bb[j] -= cfg.learning_rate * grads.biases[li][j];
        if (!w.all_finite() || !bb.all_finite())
          throw Divergence("parameters became non-finite at epoch " + std::to_string(epoch));
        cur = cur.with_params(li, std::move(w), std::move(bb));
      }
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  const double acc = accuracy(cur, images, labels);
  return {std::move(cur), std::move(history), acc};
}

Network randomize_weights(const Network& net, std::size_t through_layer, std::uint64_t seed) {
  const auto layers = net.parameterized_layers();
  if (through_layer > layers.size())
    throw ValidationError("through_layer exceeds the number of parameterized layers");
  const Network fresh = Network::initialized(net.input_shape(), net.layers(), seed);
  Network out = net;
  for (std::size_t k = 0; k < through_layer; ++k) {
    const std::size_t li = layers[layers.size() - 1 - k];
    out = out.with_params(li, fresh.weight(li), fresh.bias(li));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr unsigned char kMagic[4] = {'F', 'O', 'R', 'G'};
constexpr std::uint8_t kVersion = 1;
constexpr const char* kInputShapeName = "meta.input_shape";

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put(bits, 8);
  }
  void bytes(const void* p, std::size_t n) {
    auto c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<unsigned char> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  double f64() {
    std::uint64_t bits = get(8);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("truncated file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw FormatError("tensor name too long");
  if (t.rank() > 0xff) throw FormatError("tensor rank too large");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

std::pair<std::string, Tensor> read_tensor(Reader& r) {
  std::string name = r.str(r.u16());
  const std::uint8_t rank = r.u8();
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError("zero dimension in tensor '" + name + "'");
    n *= d;
  }
  if (n > (std::size_t{1} << 31)) throw FormatError("tensor '" + name + "' is implausibly large");
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64();
  return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

void write_header(Writer& w) {
  w.bytes(kMagic, 4);
  w.u8(kVersion);
}

void read_header(Reader& r) {
  for (unsigned char m : kMagic)
    if (r.u8() != m) throw FormatError("bad magic");
  const auto version = r.u8();
  if (version != kVersion) throw VersionError("unsupported version " + std::to_string(version));
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<unsigned char> serialize(const Network& net) {
  Writer w;
  write_header(w);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& L : net.layers()) {
    w.u8(static_cast<std::uint8_t>(L.kind));
    w.u32(L.kernel_size);
    w.u32(L.stride);
    w.u32(L.channels_out);
    w.u32(static_cast<std::uint32_t>(L.padding));
  }
  auto params = net.params();
  w.u32(static_cast<std::uint32_t>(params.size() + 1));
  Tensor meta({3});
  for (std::size_t i = 0; i < 3; ++i) meta[i] = static_cast<double>(net.input_shape()[i]);
  write_tensor(w, kInputShapeName, meta);
  for (const auto& [name, t] : params) write_tensor(w, name, t);
  return w.take();
}

Network deserialize(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  read_header(r);
  const std::uint32_t nlayers = r.u32();
  if (nlayers > 4096) throw FormatError("implausible layer count");
  std::vector<LayerSpec> layers(nlayers);
  for (auto& L : layers) {
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::Softmax)) throw FormatError("unknown layer type");
    L.kind = static_cast<LayerKind>(kind);
    L.kernel_size = r.u32();
    L.stride = r.u32();
    L.channels_out = r.u32();
    const auto pad = r.u32();
    if (pad > 1) throw FormatError("bad padding flag");
    L.padding = static_cast<Padding>(pad);
  }
  const std::uint32_t ntensors = r.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < ntensors; ++i) tensors.insert(read_tensor(r));
  if (!r.done()) throw FormatError("trailing bytes after tensor payload");
  auto meta = tensors.find(kInputShapeName);
  if (meta == tensors.end() || meta->second.size() != 3) throw ValidationError("missing input shape");
  Shape input;
  for (double v : meta->second.data()) {
    if (!(v >= 1.0) || v != std::floor(v)) throw ValidationError("bad input shape entry");
    input.push_back(static_cast<std::size_t>(v));
  }
  tensors.erase(meta);
  return Network(std::move(input), std::move(layers), tensors);
}

void save_model(const Network& net, const std::filesystem::path& path) {
  auto bytes = serialize(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Network load_model(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::vector<unsigned char> serialize_tensors(const std::map<std::string, Tensor>& tensors) {
  Writer w;
  write_header(w);
  w.u32(0);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) write_tensor(w, name, t);
  return w.take();
}

std::map<std::string, Tensor> deserialize_tensors(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  read_header(r);
  if (r.u32() != 0) throw FormatError("tensor file must not contain layers");
  const std::uint32_t n = r.u32();
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < n; ++i) out.insert(read_tensor(r));
  if (!r.done()) throw FormatError("trailing bytes after tensor payload");
  return out;
}

// ---------------------------------------------------------------------------
// Presets

std::vector<std::string> preset_names() {
  return {"cnn-max", "cnn-avg", "cnn-stride1", "cnn-stride2", "cnn-stride4", "linear"};
}

Network make_preset(const std::string& name, std::uint64_t seed, Shape input_shape,
                    std::size_t num_classes) {
  const auto nc = static_cast<std::uint32_t>(num_classes);
  auto cnn = [&](bool max_pool, std::uint32_t stride) {
    auto pool = [&] { return max_pool ? LayerSpec::max_pool(2, stride) : LayerSpec::avg_pool(2, stride); };
    return std::vector<LayerSpec>{LayerSpec::conv(3, 8), LayerSpec::relu(), pool(),
                                  LayerSpec::conv(3, 16), LayerSpec::relu(), pool(),
                                  LayerSpec::flatten(), LayerSpec::dense(nc)};
  };
  std::vector<LayerSpec> layers;
  if (name == "cnn-max" || name == "cnn-stride2") layers = cnn(true, 2);
  else if (name == "cnn-avg") layers = cnn(false, 2);
  else if (name == "cnn-stride1") layers = cnn(true, 1);
  else if (name == "cnn-stride4") layers = cnn(true, 4);
  else if (name == "linear") layers = {LayerSpec::flatten(), LayerSpec::dense(nc)};
  else throw ConfigError("unknown preset '" + name + "'");
  return Network::initialized(std::move(input_shape), std::move(layers), seed);
}

}  // namespace forgrad
