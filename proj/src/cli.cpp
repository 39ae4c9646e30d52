#include "forgrad/cli.hpp"

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "forgrad/dataset.hpp"
#include "forgrad/errors.hpp"
#include "forgrad/experiments.hpp"
#include "forgrad/filtering.hpp"
#include "forgrad/report.hpp"
#include "forgrad/rng.hpp"
#include "json.hpp"

#ifndef FORGRAD_VERSION
#define FORGRAD_VERSION "0.0.0"
#endif

namespace forgrad {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExperimentConfig {
  std::size_t n_images = 100;
  std::vector<double> epsilon_scales{0.01, 0.05, 0.1};
  std::size_t n_pairs = 200;
  double sanity_threshold = 0.2;
  std::size_t sanity_images = 50;
};

struct Options {
  std::string subcommand;
  std::string model;
  std::string data = "synthetic:2000";
  std::string method = "saliency";
  std::optional<double> sigma;
  std::vector<std::string> sigma_files;
  std::string mode = "gradient";
  std::string grid;
  std::string baseline = "zero";
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string config;
  std::string splits;
  std::string preset = "cnn-max";
  std::string objective = "faithfulness";
  std::string experiment;
  std::vector<std::string> reports;
  std::size_t n = 1000;
  std::size_t limit = 0;
  std::size_t index = 0;

  MetricConfig metric;
  MethodConfig method_cfg;
  TrainConfig train;
  ExperimentConfig exp;
  json config_json = json::object();
};

// Errors the caller can fix by changing the command line.
bool is_usage_error(const Error& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UnsupportedMethod*>(&e) ||
         dynamic_cast<const NegativeSigma*>(&e) || dynamic_cast<const DegenerateSubsetSize*>(&e);
}

template <typename T>
void take(const json& obj, const char* key, T& field) {
  if (obj.contains(key)) field = obj.at(key).get<T>();
}

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config key '" + section + "." + k + "'");
  }
}

void apply_config(Options& o) {
  if (o.config.empty()) return;
  json j;
  try {
    j = json::parse(read_text_file(o.config));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  check_keys(j, "config", {"metric", "method", "train", "experiment"});
  try {
    if (j.contains("metric")) {
      const auto& m = j["metric"];
      check_keys(m, "metric", {"pixel_step", "baseline", "mufid_subset_size", "mufid_n_subsets", "sens_radius",
                               "sens_n_samples"});
      take(m, "pixel_step", o.metric.pixel_step);
      take(m, "baseline", o.baseline);
      take(m, "mufid_subset_size", o.metric.mufid_subset_size);
      take(m, "mufid_n_subsets", o.metric.mufid_n_subsets);
      take(m, "sens_radius", o.metric.sens_radius);
      take(m, "sens_n_samples", o.metric.sens_n_samples);
    }
    if (j.contains("method")) {
      const auto& m = j["method"];
      check_keys(m, "method", {"n_samples", "noise_std", "ig_steps", "ig_baseline", "occlusion_patch",
                               "occlusion_stride", "occlusion_baseline", "occlusion_noise_baseline", "rise_grid",
                               "rise_keep_prob", "rise_samples"});
      take(m, "n_samples", o.method_cfg.n_samples);
      take(m, "noise_std", o.method_cfg.noise_std);
      take(m, "ig_steps", o.method_cfg.ig_steps);
      take(m, "ig_baseline", o.method_cfg.ig_baseline);
      take(m, "occlusion_patch", o.method_cfg.occlusion_patch);
      take(m, "occlusion_stride", o.method_cfg.occlusion_stride);
      take(m, "occlusion_baseline", o.method_cfg.occlusion_baseline);
      take(m, "occlusion_noise_baseline", o.method_cfg.occlusion_noise_baseline);
      take(m, "rise_grid", o.method_cfg.rise_grid);
      take(m, "rise_keep_prob", o.method_cfg.rise_keep_prob);
      take(m, "rise_samples", o.method_cfg.rise_samples);
    }
    if (j.contains("train")) {
      const auto& m = j["train"];
      check_keys(m, "train", {"learning_rate", "epochs", "batch_size"});
      take(m, "learning_rate", o.train.learning_rate);
      take(m, "epochs", o.train.epochs);
      take(m, "batch_size", o.train.batch_size);
    }
    if (j.contains("experiment")) {
      const auto& m = j["experiment"];
      check_keys(m, "experiment", {"n_images", "epsilon_scales", "n_pairs", "sanity_threshold", "sanity_images"});
      take(m, "n_images", o.exp.n_images);
      take(m, "epsilon_scales", o.exp.epsilon_scales);
      take(m, "n_pairs", o.exp.n_pairs);
      take(m, "sanity_threshold", o.exp.sanity_threshold);
      take(m, "sanity_images", o.exp.sanity_images);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  o.config_json = j;
}

void finalize(Options& o) {
  apply_config(o);
  if (o.baseline == "zero") o.metric.baseline = BaselineMode::Zero;
  else if (o.baseline == "noise") o.metric.baseline = BaselineMode::UniformNoise;
  else throw ConfigError("--baseline must be 'zero' or 'noise'");
  o.metric.seed = o.seed;
  o.method_cfg.seed = o.seed;
  o.train.seed = o.seed;
  o.metric.validate();
  o.method_cfg.validate();
  parse_filter_mode(o.mode);
  if (o.sigma && *o.sigma < 0) throw NegativeSigma("--sigma must be >= 0");
  if (o.objective != "faithfulness" && o.objective != "mufidelity")
    throw ConfigError("--objective must be 'faithfulness' or 'mufidelity'");
}

std::vector<double> parse_grid_csv(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad --grid entry '" + item + "'");
    }
  }
  return out;
}

std::vector<Method> parse_methods(const std::string& text) {
  if (text == "all") return all_methods();
  if (text == "white-box") return white_box_methods();
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_method(item));
  if (out.empty()) throw ConfigError("--method is empty");
  return out;
}

Dataset load_data(const Options& o) {
  Dataset d;
  const std::string prefix = "synthetic:";
  if (o.data.rfind(prefix, 0) == 0) {
    std::size_t n = 0;
    try {
      n = std::stoul(o.data.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ConfigError("--data synthetic:N needs a positive count");
    }
    d = gen_synthetic(n, o.seed);
  } else {
    const fs::path dir(o.data);
    d = load_idx(dir / "images.idx", dir / "labels.idx");
    if (fs::exists(dir / "splits.json")) d.splits = manifest_from_json(read_text_file(dir / "splits.json"));
  }
  if (!o.splits.empty()) d.splits = manifest_from_json(read_text_file(o.splits));
  d.validate();
  return d;
}

Network load_net(const Options& o) {
  if (o.model.empty()) throw ConfigError("--model is required for '" + o.subcommand + "'");
  return load_model(o.model);
}

std::vector<Tensor> limited(std::vector<Tensor> v, std::size_t limit) {
  if (limit && v.size() > limit) v.resize(limit);
  return v;
}

std::vector<std::size_t> predicted(const Network& net, const std::vector<Tensor>& images) {
  std::vector<std::size_t> out;
  for (const auto& x : images) out.push_back(argmax_class(forward(net, x).logits));
  return out;
}

SigmaGrid grid_for(const Options& o, const Network& net) {
  const Shape& s = net.input_shape();
  if (o.grid.empty()) return SigmaGrid::default_for(s[1], s[2]);
  return SigmaGrid(parse_grid_csv(o.grid), s[1], s[2]);
}

double half_grid(const SigmaGrid& g) { return g.values()[g.values().size() / 2]; }

class Run {
 public:
  Run(const Options& o) : o_(o), start_(std::chrono::steady_clock::now()) {
    manifest_["version"] = FORGRAD_VERSION;
    manifest_["subcommand"] = o.subcommand;
    manifest_["seed"] = o.seed;
    manifest_["config"] = o.config_json;
    manifest_["outputs"] = json::object();
  }

  void note(const std::string& key, json value) { manifest_[key] = std::move(value); }

  void note_data(const Dataset& d) {
    manifest_["data"] = {{"spec", o_.data},
                         {"source", d.source},
                         {"n_images", d.images.size()},
                         {"split_manifest_hash", hex64(d.splits.hash())}};
  }

  void write(const std::string& name, const std::string& text) {
    fs::create_directories(o_.out);
    write_text_file(fs::path(o_.out) / name, text);
    const auto* p = reinterpret_cast<const unsigned char*>(text.data());
    manifest_["outputs"][name] = hex64(fnv1a(std::span<const unsigned char>(p, text.size())));
  }

  void write_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
    fs::create_directories(o_.out);
    write_text_file(fs::path(o_.out) / name, std::string(bytes.begin(), bytes.end()));
    manifest_["outputs"][name] = hex64(fnv1a(bytes));
  }

  void finish() {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest_["elapsed_seconds"] = elapsed;
    fs::create_directories(o_.out);
    write_text_file(fs::path(o_.out) / "run-manifest.json", manifest_.dump(2) + "\n");
  }

 private:
  const Options& o_;
  std::chrono::steady_clock::time_point start_;
  json manifest_;
};

std::string map_csv(const Tensor& m) {
  std::ostringstream out;
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) out << (c ? "," : "") << fmt_double(m.at(r, c));
    out << '\n';
  }
  return out.str();
}

AttributionMap compute_map(const Network& net, const Tensor& x, std::size_t c, Method m, std::optional<double> sigma,
                           FilterMode mode, const MethodConfig& cfg) {
  if (sigma) return attribute_filtered(net, x, c, m, *sigma, mode, cfg);
  return attribute(m, GradientProvider(net), x, c, cfg);
}

// Sigma files are tied to one model and one split manifest.
SigmaFile load_sigma_file(const std::string& path, const Network& net, const Dataset& d) {
  SigmaFile f = parse_sigma_file(read_text_file(path));
  if (f.model_hash != hex64(net.hash())) throw ValidationError(path + " was computed for a different model");
  if (f.split_manifest_hash != hex64(d.splits.hash()))
    throw SplitViolation(path + " was computed under a different split manifest");
  return f;
}

int cmd_gen_data(const Options& o, Run& run) {
  const Dataset d = gen_synthetic(o.n, o.seed);
  fs::create_directories(o.out);
  write_idx(d, fs::path(o.out) / "images.idx", fs::path(o.out) / "labels.idx");
  run.write("splits.json", manifest_to_json(d.splits) + "\n");
  run.note_data(d);
  return 0;
}

int cmd_train(const Options& o, Run& run) {
  const Dataset d = load_data(o);
  const Shape& s = d.images.front().shape();
  const Network init = make_preset(o.preset, o.seed, s, d.num_classes);
  const auto train_x = d.images_of(Split::Train);
  const auto train_y = d.labels_of(Split::Train);
  const auto result = train(init, train_x, train_y, o.train);
  const auto test_x = d.images_of(Split::Test);
  const auto test_y = d.labels_of(Split::Test);
  const double test_acc = test_x.empty() ? 0.0 : accuracy(result.net, test_x, test_y);
  run.write_bytes("model.forg", serialize(result.net));
  json j;
  j["preset"] = o.preset;
  j["loss_history"] = result.loss_history;
  j["train_accuracy"] = result.train_accuracy;
  j["test_accuracy"] = test_acc;
  j["model_hash"] = hex64(result.net.hash());
  run.write("train.json", j.dump(2) + "\n");
  run.note_data(d);
  run.note("model_hash", hex64(result.net.hash()));
  return 0;
}

std::optional<double> resolve_sigma(const Options& o, const Network& net, const Dataset& d, FilterMode& mode) {
  if (!o.sigma_files.empty()) {
    const SigmaFile f = load_sigma_file(o.sigma_files.front(), net, d);
    mode = parse_filter_mode(f.mode);
    return f.sigma_star;
  }
  return o.sigma;
}

int cmd_attribute(const Options& o, Run& run) {
  const Network net = load_net(o);
  const Dataset d = load_data(o);
  const auto& test = d.splits.test;
  if (o.index >= test.size()) throw ConfigError("--index beyond the test split");
  const Tensor& x = d.images[test[o.index]];
  FilterMode mode = parse_filter_mode(o.mode);
  const auto sigma = resolve_sigma(o, net, d, mode);
  const std::size_t c = argmax_class(forward(net, x).logits);
  const auto m = compute_map(net, x, c, parse_method(o.method), sigma, mode, o.method_cfg);
  run.write("attribution.csv", map_csv(m.values));
  json j;
  j["method"] = method_name(m.method);
  j["target_class"] = m.target_class;
  j["image_index"] = test[o.index];
  j["provenance"] = provenance_name(m.provenance);
  j["sigma"] = m.sigma ? json(*m.sigma) : json(nullptr);
  run.write("attribution.json", j.dump(2) + "\n");
  run.note_data(d);
  run.note("model_hash", hex64(net.hash()));
  return 0;
}

int cmd_spectrum(const Options& o, Run& run) {
  const Network net = load_net(o);
  const Dataset d = load_data(o);
  const auto images = limited(d.images_of(Split::Test), o.limit);
  const auto classes = predicted(net, images);
  FilterMode mode = parse_filter_mode(o.mode);
  const auto sigma = resolve_sigma(o, net, d, mode);
  const Method m = parse_method(o.method);
  SignatureAccumulator acc;
  for (std::size_t i = 0; i < images.size(); ++i)
    acc.add(compute_map(net, images[i], classes[i], m, sigma, mode, o.method_cfg).values);
  const auto sig = acc.result();
  run.write("signature.csv", signature_csv(sig));
  run.write("slope.json", slope_json(power_slope(sig), images.size(), {images.front().dim(1), images.front().dim(2)}));
  run.note_data(d);
  run.note("model_hash", hex64(net.hash()));
  return 0;
}

int cmd_slope(const Options& o, Run& run) {
  const Network net = load_net(o);
  const Dataset d = load_data(o);
  const auto images = limited(d.images_of(Split::Test), o.limit);
  run.write("slopes.csv", slopes_csv(experiment_layer_slopes({{"model", net}}, images)));
  run.note_data(d);
  run.note("model_hash", hex64(net.hash()));
  return 0;
}

int cmd_sigma_search(const Options& o, Run& run) {
  const Network net = load_net(o);
  const Dataset d = load_data(o);
  const auto images = limited(d.images_of(Split::Val), o.limit);
  const auto grid = grid_for(o, net);
  SigmaSearchOptions so;
  so.method = parse_method(o.method);
  so.mode = parse_filter_mode(o.mode);
  so.objective = o.objective == "faithfulness" ? Objective::Faithfulness : Objective::MuFidelity;
  so.method_cfg = o.method_cfg;
  so.metric_cfg = o.metric;
  const auto result = sigma_search(net, images, predicted(net, images), grid, so);
  SigmaFile f;
  f.model_hash = hex64(net.hash());
  f.method = method_name(so.method);
  f.mode = filter_mode_name(so.mode);
  f.grid = grid.values();
  f.curve = result.curve;
  f.sigma_star = result.sigma_star;
  f.n_images = result.n_images;
  f.split_manifest_hash = hex64(d.splits.hash());
  run.write("sigma.json", sigma_file_json(f));
  run.note_data(d);
  run.note("model_hash", f.model_hash);
  return 0;
}

int cmd_evaluate(const Options& o, Run& run) {
  const Network net = load_net(o);
  const Dataset d = load_data(o);
  const auto images = limited(d.images_of(Split::Test), o.limit);
  if (images.empty()) throw EmptyInput("the test split is empty");
  const auto classes = predicted(net, images);

  struct Job {
    Method method;
    std::optional<double> sigma;
    FilterMode mode;
  };
  std::vector<Job> jobs;
  if (!o.sigma_files.empty()) {
    for (const auto& path : o.sigma_files) {
      const SigmaFile f = load_sigma_file(path, net, d);
      jobs.push_back({parse_method(f.method), f.sigma_star, parse_filter_mode(f.mode)});
    }
  } else {
    for (Method m : parse_methods(o.method)) jobs.push_back({m, o.sigma, parse_filter_mode(o.mode)});
  }

  std::vector<EvalRow> rows;
  for (const auto& job : jobs) {
    std::vector<ImageMetrics> per_image;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::size_t c = classes[i];
      const auto explain = [&](const Tensor& xi) {
        return compute_map(net, xi, c, job.method, job.sigma, job.mode, o.method_cfg).values;
      };
      const Tensor map = explain(images[i]);
      per_image.push_back(evaluate_image(net, images[i], map, c, explain, o.metric));
    }
    EvalRow row;
    row.model_hash = hex64(net.hash());
    row.method = method_name(job.method);
    row.provenance = provenance_name(!job.sigma ? Provenance::Unfiltered
                                     : job.mode == FilterMode::Gradient ? Provenance::GradientFiltered
                                                                        : Provenance::MapFiltered);
    row.sigma = job.sigma;
    row.n_images = images.size();
    row.metrics = summarize(std::move(per_image));
    rows.push_back(std::move(row));
  }
  run.write("report.json", report_json(rows));
  run.write("report.csv", report_csv(rows));
  run.note_data(d);
  run.note("model_hash", hex64(net.hash()));
  return 0;
}

int cmd_rank(const Options& o, Run& run, std::ostream& out) {
  std::vector<std::string> paths = o.reports;
  if (paths.empty()) paths.push_back((fs::path(o.out) / "report.json").string());
  std::vector<EvalRow> rows;
  for (const auto& p : paths) {
    auto r = parse_report_json(read_text_file(p));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) throw EmptyInput("no evaluated methods to rank");
  const auto ranked = rank_rows(std::move(rows));
  const std::string csv = ranking_csv(ranked);
  run.write("ranking.csv", csv);
  out << csv;
  return 0;
}

int cmd_experiment(const Options& o, Run& run) {
  const Dataset d = load_data(o);
  const auto& shape = d.images.front().shape();
  run.note_data(d);
  if (o.experiment == "slopes") {
    const auto images = limited(d.images_of(Split::Test), o.limit ? o.limit : o.exp.n_images);
    std::vector<std::pair<std::string, Network>> variants;
    if (!o.model.empty()) variants.emplace_back("trained", load_net(o));
    for (const char* p : {"cnn-max", "cnn-avg", "cnn-stride1", "cnn-stride2", "cnn-stride4"})
      variants.emplace_back(std::string("untrained-") + p, make_preset(p, o.seed, shape, d.num_classes));
    run.write("slopes.csv", slopes_csv(experiment_layer_slopes(variants, images)));
    return 0;
  }
  const Network net = load_net(o);
  run.note("model_hash", hex64(net.hash()));
  if (o.experiment == "taylor") {
    const auto images = limited(d.images_of(Split::Test), o.limit ? o.limit : o.exp.n_images);
    run.write("taylor.csv", taylor_csv(experiment_taylor(net, images, grid_for(o, net), o.exp.epsilon_scales, o.seed)));
  } else if (o.experiment == "sanity") {
    const auto images = limited(d.images_of(Split::Test), o.limit ? o.limit : o.exp.sanity_images);
    FilterMode mode = FilterMode::Gradient;
    auto sigma = resolve_sigma(o, net, d, mode);
    if (!sigma) sigma = half_grid(grid_for(o, net));
    std::vector<SanityReport> reports;
    for (Method m : parse_methods(o.method))
      reports.push_back(experiment_sanity(net, images, m, *sigma, o.seed, o.method_cfg, o.exp.sanity_threshold));
    run.write("sanity.csv", sanity_csv(reports));
  } else if (o.experiment == "bias") {
    const auto images = limited(d.images_of(Split::Test), o.limit);
    run.write("bias.csv", bias_csv(experiment_metric_bias(net, images, o.exp.n_pairs, o.seed, o.metric)));
  } else {
    throw ConfigError("unknown experiment '" + o.experiment + "' (taylor, slopes, sanity, bias)");
  }
  return 0;
}

void add_common(CLI::App& sub, Options& o) {
  sub.add_option("--model", o.model, "model file");
  sub.add_option("--data", o.data, "dataset directory or synthetic:N");
  sub.add_option("--splits", o.splits, "split manifest JSON overriding the dataset's");
  sub.add_option("--seed", o.seed, "seed for all randomness");
  sub.add_option("--out", o.out, "output directory");
  sub.add_option("--config", o.config, "JSON config");
  sub.add_option("--limit", o.limit, "use at most this many images (0 = all)");
}

void add_method(CLI::App& sub, Options& o) {
  sub.add_option("--method", o.method, "attribution method");
  sub.add_option("--sigma", o.sigma, "low-pass cutoff");
  sub.add_option("--sigma-file", o.sigma_files, "sigma.json from sigma-search");
  sub.add_option("--mode", o.mode, "gradient or map");
  sub.add_option("--baseline", o.baseline, "zero or noise");
  sub.add_option("--grid", o.grid, "comma-separated sigma grid");
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"forgrad: frequency-filtered gradient attributions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FORGRAD_VERSION);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic IDX dataset");
  gen->add_option("--n", o.n, "number of images")->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.seed);
  gen->add_option("--out", o.out);

  auto* tr = app.add_subcommand("train", "train a preset on the train split");
  add_common(*tr, o);
  tr->add_option("--preset", o.preset, "architecture preset");

  auto* at = app.add_subcommand("attribute", "attribution map for one test image");
  add_common(*at, o);
  add_method(*at, o);
  at->add_option("--index", o.index, "position in the test split");

  auto* sp = app.add_subcommand("spectrum", "Fourier signature of attribution maps");
  add_common(*sp, o);
  add_method(*sp, o);

  auto* sl = app.add_subcommand("slope", "layer-wise gradient slopes");
  add_common(*sl, o);

  auto* ss = app.add_subcommand("sigma-search", "pick sigma* on the val split");
  add_common(*ss, o);
  add_method(*ss, o);
  ss->add_option("--objective", o.objective, "faithfulness or mufidelity");

  auto* ev = app.add_subcommand("evaluate", "metrics on the test split");
  add_common(*ev, o);
  add_method(*ev, o);

  auto* rk = app.add_subcommand("rank", "order evaluated methods by F + muF - S");
  rk->add_option("--report", o.reports, "report.json files (default OUT/report.json)");
  rk->add_option("--out", o.out);

  auto* ex = app.add_subcommand("experiment", "taylor, slopes, sanity or bias");
  add_common(*ex, o);
  add_method(*ex, o);
  ex->add_option("name", o.experiment, "experiment name")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << FORGRAD_VERSION << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  o.subcommand = app.get_subcommands().front()->get_name();

  try {
    finalize(o);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    Run run(o);
    int rc = 0;
    if (o.subcommand == "gen-data") rc = cmd_gen_data(o, run);
    else if (o.subcommand == "train") rc = cmd_train(o, run);
    else if (o.subcommand == "attribute") rc = cmd_attribute(o, run);
    else if (o.subcommand == "spectrum") rc = cmd_spectrum(o, run);
    else if (o.subcommand == "slope") rc = cmd_slope(o, run);
    else if (o.subcommand == "sigma-search") rc = cmd_sigma_search(o, run);
    else if (o.subcommand == "evaluate") rc = cmd_evaluate(o, run);
    else if (o.subcommand == "rank") rc = cmd_rank(o, run, out);
    else if (o.subcommand == "experiment") rc = cmd_experiment(o, run);
    if (rc == 0) run.finish();
    return rc;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_usage_error(e) ? 1 : 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace forgrad
