#include "forgrad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "forgrad/errors.hpp"

namespace forgrad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeMismatch("shape " + shape_string(shape_) + " does not hold " +
                        std::to_string(data_.size()) + " values");
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::channel(std::size_t ch) const {
  if (rank() != 3 || ch >= shape_[0]) throw ShapeMismatch("channel() needs a (C,H,W) tensor");
  const std::size_t plane = shape_[1] * shape_[2];
  Tensor out({shape_[1], shape_[2]});
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(ch * plane), plane, out.data_.begin());
  return out;
}

void Tensor::set_channel(std::size_t ch, const Tensor& plane) {
  if (rank() != 3 || ch >= shape_[0] || plane.shape() != Shape{shape_[1], shape_[2]})
    throw ShapeMismatch("set_channel shape mismatch");
  std::copy(plane.data_.begin(), plane.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(ch * plane.size()));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }
double Tensor::norm2() const { return std::sqrt(dot(*this, *this)); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeMismatch("dot of differently sized tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {
template <class Op>
Tensor zip(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}
}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) { return zip(a, b, std::plus<>()); }
Tensor operator-(const Tensor& a, const Tensor& b) { return zip(a, b, std::minus<>()); }
Tensor hadamard(const Tensor& a, const Tensor& b) { return zip(a, b, std::multiplies<>()); }

Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 ||
          std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}

}  // namespace forgrad
