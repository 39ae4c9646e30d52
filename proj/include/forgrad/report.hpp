#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgrad/experiments.hpp"
#include "forgrad/filtering.hpp"
#include "forgrad/metrics.hpp"
#include "forgrad/spectral.hpp"

namespace forgrad {

/// Contents of sigma.json.
struct SigmaFile {
  std::string model_hash;
  std::string method;
  std::string mode;
  std::vector<double> grid;
  std::vector<std::pair<double, double>> curve;
  double sigma_star = 0.0;
  std::size_t n_images = 0;
  std::string split_manifest_hash;
};

std::string hex64(std::uint64_t v);

std::string sigma_file_json(const SigmaFile& f);
SigmaFile parse_sigma_file(const std::string& text);

struct EvalRow {
  std::string model_hash;
  std::string method;
  std::string provenance;
  std::optional<double> sigma;
  MetricResult metrics;
  std::size_t n_images = 0;
};

std::string report_json(const std::vector<EvalRow>& rows);
std::string report_csv(const std::vector<EvalRow>& rows);
std::vector<EvalRow> parse_report_json(const std::string& text);

/// Rows sorted by aggregate F + muF - S, best first; ties keep input order.
std::vector<EvalRow> rank_rows(std::vector<EvalRow> rows);
std::string ranking_csv(const std::vector<EvalRow>& ranked);

std::string signature_csv(const FourierSignature& sig);
std::string slope_json(const PowerSlope& fit, std::size_t n_images, const Shape& shape);
std::string slopes_csv(const LayerSlopeReport& r);
std::string taylor_csv(const TaylorReport& r);
std::string sanity_csv(const std::vector<SanityReport>& reports);
std::string bias_csv(const BiasReport& r);

/// Shortest round-trip decimal for a double.
std::string fmt_double(double v);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& text);

}  // namespace forgrad
