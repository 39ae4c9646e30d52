#include "forgrad/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "forgrad/errors.hpp"
#include "json.hpp"

namespace forgrad {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string sigma_file_json(const SigmaFile& f) {
  json j;
  j["model_hash"] = f.model_hash;
  j["method"] = f.method;
  j["mode"] = f.mode;
  j["grid"] = f.grid;
  json curve = json::array();
  for (auto [s, v] : f.curve) curve.push_back({s, v});
  j["curve"] = curve;
  j["sigma_star"] = f.sigma_star;
  j["n_images"] = f.n_images;
  j["split_manifest_hash"] = f.split_manifest_hash;
  return j.dump(2) + "\n";
}

SigmaFile parse_sigma_file(const std::string& text) {
  try {
    const auto j = json::parse(text);
    SigmaFile f;
    f.model_hash = j.at("model_hash").get<std::string>();
    f.method = j.at("method").get<std::string>();
    f.mode = j.at("mode").get<std::string>();
    f.grid = j.at("grid").get<std::vector<double>>();
    for (const auto& p : j.at("curve")) f.curve.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    f.sigma_star = j.at("sigma_star").get<double>();
    f.n_images = j.at("n_images").get<std::size_t>();
    f.split_manifest_hash = j.at("split_manifest_hash").get<std::string>();
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad sigma file: ") + e.what());
  }
}

std::string report_json(const std::vector<EvalRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["model_hash"] = r.model_hash;
    j["method"] = r.method;
    j["provenance"] = r.provenance;
    j["sigma"] = r.sigma ? json(*r.sigma) : json(nullptr);
    j["n_images"] = r.n_images;
    j["deletion"] = r.metrics.deletion;
    j["insertion"] = r.metrics.insertion;
    j["faithfulness"] = r.metrics.faithfulness;
    j["mu_fidelity"] = r.metrics.mu_fidelity;
    j["sensitivity"] = r.metrics.sensitivity;
    j["aggregate"] = r.metrics.aggregate;
    json per = json::array();
    for (const auto& m : r.metrics.per_image)
      per.push_back({{"deletion", m.deletion},
                     {"insertion", m.insertion},
                     {"faithfulness", m.faithfulness},
                     {"mu_fidelity", m.mu_fidelity},
                     {"sensitivity", m.sensitivity}});
    j["per_image"] = std::move(per);
    arr.push_back(j);
  }
  return json{{"rows", arr}}.dump(2) + "\n";
}

std::vector<EvalRow> parse_report_json(const std::string& text) {
  try {
    std::vector<EvalRow> rows;
    const json doc = json::parse(text);
    for (const auto& j : doc.at("rows")) {
      EvalRow r;
      r.model_hash = j.value("model_hash", "");
      r.method = j.at("method").get<std::string>();
      r.provenance = j.at("provenance").get<std::string>();
      if (!j.at("sigma").is_null()) r.sigma = j.at("sigma").get<double>();
      r.n_images = j.at("n_images").get<std::size_t>();
      r.metrics.deletion = j.at("deletion").get<double>();
      r.metrics.insertion = j.at("insertion").get<double>();
      r.metrics.faithfulness = j.at("faithfulness").get<double>();
      r.metrics.mu_fidelity = j.at("mu_fidelity").get<double>();
      r.metrics.sensitivity = j.at("sensitivity").get<double>();
      r.metrics.aggregate = j.at("aggregate").get<double>();
      if (j.contains("per_image"))
        for (const auto& m : j.at("per_image"))
          r.metrics.per_image.push_back({m.at("deletion").get<double>(), m.at("insertion").get<double>(),
                                         m.at("faithfulness").get<double>(), m.at("mu_fidelity").get<double>(),
                                         m.at("sensitivity").get<double>()});
      rows.push_back(std::move(r));
    }
    return rows;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad report: ") + e.what());
  }
}

namespace {
std::string sigma_cell(const std::optional<double>& s) { return s ? fmt_double(*s) : ""; }
}  // namespace

std::string report_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "method,provenance,sigma,n_images,deletion,insertion,faithfulness,mu_fidelity,sensitivity,aggregate\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.provenance << ',' << sigma_cell(r.sigma) << ',' << r.n_images << ','
        << fmt_double(r.metrics.deletion) << ',' << fmt_double(r.metrics.insertion) << ','
        << fmt_double(r.metrics.faithfulness) << ',' << fmt_double(r.metrics.mu_fidelity) << ','
        << fmt_double(r.metrics.sensitivity) << ',' << fmt_double(r.metrics.aggregate) << '\n';
  }
  return out.str();
}

std::vector<EvalRow> rank_rows(std::vector<EvalRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const EvalRow& a, const EvalRow& b) { return a.metrics.aggregate > b.metrics.aggregate; });
  return rows;
}

std::string ranking_csv(const std::vector<EvalRow>& ranked) {
  std::ostringstream out;
  out << "rank,method,provenance,sigma,faithfulness,mu_fidelity,sensitivity,aggregate\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    out << i + 1 << ',' << r.method << ',' << r.provenance << ',' << sigma_cell(r.sigma) << ','
        << fmt_double(r.metrics.faithfulness) << ',' << fmt_double(r.metrics.mu_fidelity) << ','
        << fmt_double(r.metrics.sensitivity) << ',' << fmt_double(r.metrics.aggregate) << '\n';
  }
  return out.str();
}

std::string signature_csv(const FourierSignature& sig) {
  std::ostringstream out;
  out << "radius,amplitude,n_images\n";
  for (std::size_t i = 0; i < sig.radii.size(); ++i)
    out << sig.radii[i] << ',' << fmt_double(sig.amplitude[i]) << ',' << sig.n_images << '\n';
  return out.str();
}

std::string slope_json(const PowerSlope& fit, std::size_t n_images, const Shape& shape) {
  json j;
  j["slope"] = fit.slope;
  j["intercept"] = fit.intercept;
  j["r_squared"] = fit.r_squared;
  j["n_images"] = n_images;
  j["shape"] = shape;
  return j.dump(2) + "\n";
}

std::string slopes_csv(const LayerSlopeReport& r) {
  std::ostringstream out;
  out << "variant,layer,kind,shape,slope,intercept,r_squared\n";
  for (const auto& row : r.rows) {
    out << row.variant << ',' << row.layer << ',' << row.kind << ',' << shape_string(row.shape) << ','
        << fmt_double(row.fit.slope) << ',' << fmt_double(row.fit.intercept) << ','
        << fmt_double(row.fit.r_squared) << '\n';
  }
  return out.str();
}

std::string taylor_csv(const TaylorReport& r) {
  std::ostringstream out;
  out << "epsilon_scale,curve,sigma,mean_ratio,n_images,n_excluded\n";
  for (const auto& s : r.scales) {
    auto tail = [&] { return ',' + std::to_string(s.n_images) + ',' + std::to_string(s.n_excluded) + '\n'; };
    for (std::size_t i = 0; i < r.sigmas.size(); ++i)
      out << fmt_double(s.epsilon_scale) << ",filtered," << fmt_double(r.sigmas[i]) << ','
          << fmt_double(s.filtered[i]) << tail();
    const auto controls = all_controls();
    for (std::size_t k = 0; k < controls.size(); ++k)
      out << fmt_double(s.epsilon_scale) << ',' << control_name(controls[k]) << ",," << fmt_double(s.controls[k])
          << tail();
  }
  return out.str();
}

std::string sanity_csv(const std::vector<SanityReport>& reports) {
  std::ostringstream out;
  out << "method,sigma,depth,unfiltered,filtered,unfiltered_passes,filtered_passes\n";
  for (const auto& r : reports)
    for (const auto& row : r.rows)
      out << method_name(r.method) << ',' << fmt_double(r.sigma) << ',' << row.depth << ','
          << fmt_double(row.unfiltered) << ',' << fmt_double(row.filtered) << ',' << r.unfiltered_passes << ','
          << r.filtered_passes << '\n';
  return out.str();
}

std::string bias_csv(const BiasReport& r) {
  std::ostringstream out;
  out << "pair,faithfulness_blob,faithfulness_dispersed,mu_fidelity_blob,mu_fidelity_dispersed\n";
  auto line = [&](const std::string& label, const BiasPair& p) {
    out << label << ',' << fmt_double(p.faithfulness_blob) << ',' << fmt_double(p.faithfulness_dispersed) << ','
        << fmt_double(p.mu_fidelity_blob) << ',' << fmt_double(p.mu_fidelity_dispersed) << '\n';
  };
  for (std::size_t i = 0; i < r.pairs.size(); ++i) line(std::to_string(i), r.pairs[i]);
  line("mean", BiasPair{r.faithfulness_blob, r.faithfulness_dispersed, r.mu_fidelity_blob, r.mu_fidelity_dispersed});
  return out.str();
}

std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + p.string());
  out << text;
}

}  // namespace forgrad
