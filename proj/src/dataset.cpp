#include "forgrad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "forgrad/errors.hpp"
#include "forgrad/rng.hpp"
#include "json.hpp"

namespace forgrad {

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const std::vector<std::size_t>& SplitManifest::indices(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  throw ValidationError("unknown split");
}

void SplitManifest::validate(std::size_t n) const {
  std::vector<int> seen(n, 0);
  for (const auto* part : {&train, &val, &test}) {
    for (auto i : *part) {
      if (i >= n) throw SplitViolation("split index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw SplitViolation("index " + std::to_string(i) + " appears in more than one split");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw SplitViolation("splits do not cover the dataset");
}

std::uint64_t SplitManifest::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* part : {&train, &val, &test}) {
    const std::uint64_t len = part->size();
    h = fnv1a_values(std::span<const std::uint64_t>(&len, 1), h);
    for (std::uint64_t i : *part) h = fnv1a_values(std::span<const std::uint64_t>(&i, 1), h);
  }
  return h;
}

SplitManifest make_splits(std::size_t n, std::uint64_t seed, double val_fraction, double test_fraction) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction > 1.0)
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x73706c6974ULL);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
  SplitManifest m;
  m.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  m.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  m.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), order.end());
  for (auto* part : {&m.train, &m.val, &m.test}) std::sort(part->begin(), part->end());
  return m;
}

std::vector<Tensor> Dataset::images_of(Split s) const {
  splits.validate(images.size());
  std::vector<Tensor> out;
  for (auto i : splits.indices(s)) out.push_back(images[i]);
  return out;
}

std::vector<std::size_t> Dataset::labels_of(Split s) const {
  splits.validate(images.size());
  std::vector<std::size_t> out;
  for (auto i : splits.indices(s)) out.push_back(labels[i]);
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) throw CountMismatch("images and labels differ in count");
  for (auto l : labels)
    if (l >= num_classes) throw ValidationError("label out of range");
  splits.validate(images.size());
}

Dataset gen_synthetic(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_synthetic needs n >= 1");
  constexpr std::size_t side = 28;
  constexpr int supersample = 4;
  Dataset data;
  data.source = "synthetic";
  data.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, i);
    const std::size_t label = i % 2;
    const double cy = uniform(rng, 9.0, 19.0), cx = uniform(rng, 9.0, 19.0);
    const double a = uniform(rng, 4.5, 8.5);
    const double b = uniform(rng, 3.0, a);
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double intensity = uniform(rng, 0.6, 1.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    Tensor img({1, side, side});
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        int inside = 0;
        for (int sy = 0; sy < supersample; ++sy) {
          for (int sx = 0; sx < supersample; ++sx) {
            const double py = static_cast<double>(y) + (sy + 0.5) / supersample - cy;
            const double px = static_cast<double>(x) + (sx + 0.5) / supersample - cx;
            const double u = ct * px + st * py, v = -st * px + ct * py;
            const bool hit = label == 0 ? (u * u) / (a * a) + (v * v) / (b * b) <= 1.0
                                        : std::abs(u) <= a && std::abs(v) <= b;
            inside += hit;
          }
        }
        img.at(0, y, x) = intensity * inside / static_cast<double>(supersample * supersample);
      }
    }
    for (auto& v : img.data()) v = std::clamp(v + 0.05 * normal01(rng), 0.0, 1.0);
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
  }
  data.splits = make_splits(n, seed);
  return data;
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (b.size() < off + 4) throw FormatError("truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto ib = read_bytes(images_path);
  const auto lb = read_bytes(labels_path);
  if (be32(ib, 0) != 0x00000803) throw FormatError("bad image IDX magic in " + images_path.string());
  if (be32(lb, 0) != 0x00000801) throw FormatError("bad label IDX magic in " + labels_path.string());
  const std::size_t n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl) throw CountMismatch(std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
  if (h == 0 || w == 0) throw FormatError("zero image dimension");
  if (ib.size() != 16 + n * h * w) throw FormatError("image payload size does not match the header");
  if (lb.size() != 8 + n) throw FormatError("label payload size does not match the header");
  Dataset data;
  data.source = "idx";
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({1, h, w});
    for (std::size_t p = 0; p < h * w; ++p) img[p] = ib[16 + i * h * w + p] / 255.0;
    data.images.push_back(std::move(img));
    data.labels.push_back(lb[8 + i]);
    max_label = std::max<std::size_t>(max_label, lb[8 + i]);
  }
  data.num_classes = std::max<std::size_t>(2, max_label + 1);
  data.splits = make_splits(n, 0);
  return data;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (data.images.empty()) throw ValidationError("nothing to write");
  const auto& shape = data.images.front().shape();
  if (shape.size() != 3 || shape[0] != 1) throw ValidationError("IDX export supports single-channel images");
  std::vector<unsigned char> ib, lb;
  put_be32(ib, 0x00000803);
  put_be32(ib, static_cast<std::uint32_t>(data.images.size()));
  put_be32(ib, static_cast<std::uint32_t>(shape[1]));
  put_be32(ib, static_cast<std::uint32_t>(shape[2]));
  for (const auto& img : data.images) {
    if (img.shape() != shape) throw ShapeMismatch("images differ in shape");
    for (double v : img.data())
      ib.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  put_be32(lb, 0x00000801);
  put_be32(lb, static_cast<std::uint32_t>(data.labels.size()));
  for (auto l : data.labels) {
    if (l > 255) throw ValidationError("label does not fit in a byte");
    lb.push_back(static_cast<unsigned char>(l));
  }
  write_bytes(images_path, ib);
  write_bytes(labels_path, lb);
}

std::string manifest_to_json(const SplitManifest& m) {
  nlohmann::json j;
  j["train"] = m.train;
  j["val"] = m.val;
  j["test"] = m.test;
  return j.dump(2);
}

SplitManifest manifest_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitManifest m;
    m.train = j.at("train").get<std::vector<std::size_t>>();
    m.val = j.at("val").get<std::vector<std::size_t>>();
    m.test = j.at("test").get<std::vector<std::size_t>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad split manifest: ") + e.what());
  }
}

}  // namespace forgrad
