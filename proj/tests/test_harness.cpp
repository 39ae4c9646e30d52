#include <fstream>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "forgrad/cli.hpp"
#include "forgrad/experiments.hpp"
#include "forgrad/report.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace forgrad;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("forgrad-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("synthetic data is deterministic and balanced") {
  const Dataset a = gen_synthetic(1000, 5), b = gen_synthetic(1000, 5);
  REQUIRE(a.images.size() == 1000);
  bool same = a.labels == b.labels && a.splits.hash() == b.splits.hash();
  for (std::size_t i = 0; i < a.images.size() && same; ++i) same = bitwise_equal(a.images[i], b.images[i]);
  CHECK(same);
  CHECK(std::count(a.labels.begin(), a.labels.end(), 0u) == 500);
  for (const auto& x : a.images) {
    CHECK(x.shape() == Shape{1, 28, 28});
    CHECK(x.min() >= 0.0);
    CHECK(x.max() <= 1.0);
  }
  CHECK_FALSE(bitwise_equal(gen_synthetic(4, 6).images[0], a.images[0]));
  // A prefix of a larger set is the smaller set.
  CHECK(bitwise_equal(gen_synthetic(10, 5).images[7], a.images[7]));
}

TEST_CASE("toy model reaches the accuracy target") {
  CHECK(fgtest::toy().test_accuracy >= 0.95);
}

TEST_CASE("IDX files") {
  TempDir dir("idx");
  // Two 2x3 images, dims big-endian.
  std::vector<unsigned char> img = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                    0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 1};
  std::vector<unsigned char> lab = {0, 0, 8, 1, 0, 0, 0, 2, 1, 0};
  write_bytes(dir.path / "i", img);
  write_bytes(dir.path / "l", lab);
  Dataset d = load_idx(dir.path / "i", dir.path / "l");
  REQUIRE(d.images.size() == 2);
  CHECK(d.images[0].shape() == Shape{1, 2, 3});
  CHECK(d.images[0] == Tensor({1, 2, 3}, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}));
  CHECK(d.images[1].at(0, 1, 2) == 1.0 / 255.0);
  CHECK(d.labels == std::vector<std::size_t>{1, 0});
  CHECK(d.source == "idx");

  auto bad = lab;
  bad[3] = 3;
  write_bytes(dir.path / "bad", bad);
  CHECK_THROWS_AS(load_idx(dir.path / "i", dir.path / "bad"), FormatError);
  auto three = lab;
  three[7] = 3;
  three.push_back(1);
  write_bytes(dir.path / "three", three);
  CHECK_THROWS_AS(load_idx(dir.path / "i", dir.path / "three"), CountMismatch);
  auto short_img = img;
  short_img.pop_back();
  write_bytes(dir.path / "short", short_img);
  CHECK_THROWS_AS(load_idx(dir.path / "short", dir.path / "l"), FormatError);

  Dataset s = gen_synthetic(12, 3);
  write_idx(s, dir.path / "si", dir.path / "sl");
  Dataset back = load_idx(dir.path / "si", dir.path / "sl");
  CHECK(back.labels == s.labels);
  for (std::size_t i = 0; i < 12; ++i) CHECK(max_abs_diff(back.images[i], s.images[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("split manifests") {
  SplitManifest m = make_splits(100, 9);
  CHECK(m.train.size() == 60);
  CHECK(m.val.size() == 20);
  CHECK(m.test.size() == 20);
  CHECK_NOTHROW(m.validate(100));
  CHECK(manifest_from_json(manifest_to_json(m)).hash() == m.hash());

  SplitManifest canary = m;
  canary.test.push_back(canary.val.front());
  CHECK_THROWS_AS(canary.validate(100), SplitViolation);
  SplitManifest missing = m;
  missing.train.pop_back();
  CHECK_THROWS_AS(missing.validate(100), SplitViolation);
  SplitManifest outside = m;
  outside.train.back() = 100;
  CHECK_THROWS_AS(outside.validate(100), SplitViolation);
  CHECK(make_splits(100, 10).hash() != m.hash());
}

TEST_CASE("taylor residuals") {
  Network net = make_preset("cnn-max", 2);
  Dataset d = gen_synthetic(6, 2);
  SigmaGrid grid({28, 12, 4}, 28, 28);
  for (const auto& x : d.images) {
    const auto ti = taylor_image(net, x, grid, 0.05, 4);
    CHECK(ti.zeta_sigma.front() == ti.zeta_max);
    const Tensor eps = taylor_epsilon(x, 0.05, 4);
    CHECK(eps.norm2() == doctest::Approx(0.05 * x.norm2()));
    const auto cache = forward(net, x);
    const std::size_t c = argmax_class(cache.logits);
    const double delta = forward(net, x + eps).logits[c] - cache.logits[c];
    CHECK(ti.zeta_control[0] == std::abs(delta));
    const Tensor g = backward_input(net, cache, c);
    CHECK(ti.zeta_max == doctest::Approx(std::abs(delta - dot(eps, g))).epsilon(1e-12));
  }
  auto r = experiment_taylor(net, d.images, grid, {0.01, 0.1}, 4);
  for (const auto& s : r.scales) {
    CHECK(s.filtered.front() == 1.0);
    CHECK(s.n_images + s.n_excluded == 6);
  }
  CHECK(control_name(all_controls().back()) == "gaussian2d");

  Rng rng = make_rng(3);
  Tensor g = fgtest::random_tensor({2, 8, 8}, rng);
  for (Control k : all_controls()) {
    const Tensor cg = control_gradient(k, g, 17);
    CHECK(cg.shape() == g.shape());
    if (k == Control::Zero) CHECK(cg.norm2() == 0.0);
    else CHECK(cg.norm2() == doctest::Approx(g.norm2()));
  }
  std::vector<double> a(g.data().begin(), g.data().end());
  const Tensor perm = control_gradient(Control::Permuted, g, 17);
  std::vector<double> b(perm.data().begin(), perm.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("layer slope experiment") {
  const Network max = make_preset("cnn-max", 3), s1 = make_preset("cnn-stride1", 3);
  CHECK(first_pool_layer(max) == 2);
  CHECK(probe_layers(max) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  // Matched presets share every parameter tensor.
  CHECK(max.weight(0) == make_preset("cnn-avg", 3).weight(0));
  CHECK(max.weight(3) == s1.weight(3));

  Dataset d = gen_synthetic(50, 8);
  auto report = experiment_layer_slopes({{"max", max}, {"stride1", s1}}, d.images);
  std::size_t rows_max = 0;
  std::size_t last_layer = 0;
  for (const auto& row : report.rows)
    if (row.variant == "max") {
      if (rows_max) CHECK(row.layer > last_layer);
      last_layer = row.layer;
      ++rows_max;
    }
  CHECK(rows_max == probe_layers(max).size());

  // Stride 1 pooling removes less of the aliasing that feeds high
  // frequencies back into the gradient.
  double slope_max = 0.0, slope_s1 = 0.0;
  for (const auto& row : report.rows) {
    if (row.layer != first_pool_layer(max)) continue;
    (row.variant == "max" ? slope_max : slope_s1) = row.fit.slope;
  }
  CAPTURE(slope_max);
  CAPTURE(slope_s1);
  CHECK(slope_s1 < slope_max);
}

TEST_CASE("sanity check starts at full correlation") {
  Network net = make_preset("cnn-max", 5);
  Dataset d = gen_synthetic(4, 5);
  auto r = experiment_sanity(net, d.images, Method::Saliency, 12.0, 3);
  REQUIRE(r.rows.size() == 4);
  CHECK(r.rows[0].depth == 0);
  CHECK(r.rows[0].unfiltered == 1.0);
  CHECK(r.rows[0].filtered == 1.0);
  CHECK(r.rows.back().depth == 3);
}

TEST_CASE("metric bias maps share one multiset") {
  for (std::size_t i = 0; i < 20; ++i) {
    auto [blob, dispersed] = bias_maps(28, 28, 9, i);
    std::vector<double> a(blob.data().begin(), blob.data().end()), b(dispersed.data().begin(), dispersed.data().end());
    CHECK_FALSE(a == b);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("report round trip and ranking") {
  EvalRow a, b, c;
  a.method = "saliency";
  a.provenance = "unfiltered";
  a.metrics = summarize({ImageMetrics{0.1, 0.3, 0.2, 0.4, 0.67}});
  b.method = "saliency";
  b.provenance = "gradient-filtered";
  b.sigma = 12.0;
  b.model_hash = "00000000000000ff";
  b.metrics = summarize({ImageMetrics{0.1, 0.38, 0.28, 0.39, 0.53}});
  c.method = "rise";
  c.provenance = "unfiltered";
  c.metrics = a.metrics;
  const auto back = parse_report_json(report_json({a, b, c}));
  REQUIRE(back.size() == 3);
  CHECK(back[1].sigma == 12.0);
  CHECK(back[1].model_hash == "00000000000000ff");
  CHECK(back[1].metrics.per_image.size() == 1);
  CHECK(back[1].metrics.aggregate == b.metrics.aggregate);
  const auto ranked = rank_rows(back);
  CHECK(ranked[0].provenance == "gradient-filtered");
  CHECK(ranked[1].method == "saliency");
  CHECK(ranked[2].method == "rise");
  CHECK(ranking_csv(ranked).rfind("rank,method", 0) == 0);

  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 0.0})
    CHECK(std::stod(fmt_double(v)) == v);
}

TEST_CASE("cli usage errors write nothing") {
  TempDir dir("cli-usage");
  const auto out = (dir.path / "out").string();
  auto r = cli({"frobnicate", "--out", out});
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
  CHECK_FALSE(fs::exists(out));
  CHECK(cli({}).code == 1);
  CHECK(cli({"evaluate", "--data", "synthetic:20", "--out", out}).code == 1);
  CHECK(cli({"gen-data", "--n", "0", "--out", out}).code == 1);
  CHECK(cli({"experiment", "nope", "--data", "synthetic:20", "--out", out}).code == 1);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("cli end to end with split discipline") {
  TempDir dir("cli-e2e");
  const auto p = [&](const char* name) { return (dir.path / name).string(); };
  REQUIRE(cli({"gen-data", "--n", "60", "--seed", "4", "--out", p("data")}).code == 0);
  CHECK(fs::exists(dir.path / "data" / "images.idx"));
  CHECK(fs::exists(dir.path / "data" / "run-manifest.json"));
  const Dataset loaded = load_idx(dir.path / "data" / "images.idx", dir.path / "data" / "labels.idx");
  CHECK(loaded.labels == gen_synthetic(60, 4).labels);

  save_model(make_preset("cnn-max", 4), dir.path / "m.forg");
  save_model(make_preset("cnn-max", 5), dir.path / "other.forg");
  auto ss = cli({"sigma-search", "--model", p("m.forg"), "--data", p("data"), "--method", "saliency",
                 "--grid", "28,8", "--out", p("search")});
  REQUIRE(ss.code == 0);
  const SigmaFile sf = parse_sigma_file(read_text_file(dir.path / "search" / "sigma.json"));
  CHECK(sf.grid == std::vector<double>{28, 8});
  CHECK(sf.n_images == 12);
  CHECK(sf.curve.size() == 2);

  auto ev = cli({"evaluate", "--model", p("m.forg"), "--data", p("data"), "--sigma-file",
                 p("search/sigma.json"), "--out", p("eval")});
  REQUIRE(ev.code == 0);
  const json rep = json::parse(read_text_file(dir.path / "eval" / "report.json"));
  CHECK(rep["rows"].size() == 1);
  CHECK(rep["rows"][0]["n_images"] == 12);
  CHECK(rep["rows"][0]["per_image"].size() == 12);
  CHECK(rep["rows"][0]["model_hash"] == sf.model_hash);

  // Wrong model for the sigma file.
  CHECK(cli({"evaluate", "--model", p("other.forg"), "--data", p("data"), "--sigma-file",
             p("search/sigma.json"), "--out", p("x1")})
            .code == 2);
  // Canary manifest: a different split than the one sigma* was chosen on.
  SplitManifest canary = make_splits(60, 99);
  write_text_file(dir.path / "canary.json", manifest_to_json(canary));
  auto cv = cli({"evaluate", "--model", p("m.forg"), "--data", p("data"), "--splits", p("canary.json"),
                 "--sigma-file", p("search/sigma.json"), "--out", p("x2")});
  CHECK(cv.code == 2);
  CHECK(cv.err.find("SplitViolation") != std::string::npos);
  // Overlapping manifest is rejected before anything runs.
  SplitManifest overlap = make_splits(60, 4);
  overlap.test.push_back(overlap.val.front());
  write_text_file(dir.path / "overlap.json", manifest_to_json(overlap));
  CHECK(cli({"evaluate", "--model", p("m.forg"), "--data", p("data"), "--splits", p("overlap.json"),
             "--method", "saliency", "--out", p("x3")})
            .code == 2);
  CHECK_FALSE(fs::exists(dir.path / "x1" / "report.json"));
  CHECK_FALSE(fs::exists(dir.path / "x2" / "report.json"));
  CHECK_FALSE(fs::exists(dir.path / "x3" / "report.json"));

  REQUIRE(cli({"evaluate", "--model", p("m.forg"), "--data", p("data"), "--method", "saliency,gradient-input",
               "--limit", "4", "--out", p("eval2")})
              .code == 0);
  auto rk = cli({"rank", "--report", p("eval/report.json"), "--report", p("eval2/report.json"), "--out",
                 p("rank")});
  REQUIRE(rk.code == 0);
  std::istringstream lines(read_text_file(dir.path / "rank" / "ranking.csv"));
  std::string line;
  std::getline(lines, line);
  double prev = 1e300;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const double agg = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(agg <= prev);
    prev = agg;
    ++n;
  }
  CHECK(n == 3);
}
