#include "iclad/ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "iclad/error.hpp"
#include "iclad/search.hpp"

namespace iclad {

namespace {

double kth_smallest(std::vector<double>& values, std::size_t k) {
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

}  // namespace

void OodConfig::validate() const {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "OOD k must be positive");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw Error(ErrorCode::invalid_argument, "OOD percentile must lie in (0, 100]");
  }
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
  if (values.empty()) throw Error(ErrorCode::empty_input, "percentile of an empty set");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw Error(ErrorCode::invalid_argument, "percentile must lie in (0, 100]");
  }
  const double n = static_cast<double>(values.size());
  // p * n first so integral products (95 * 100) stay exact.
  auto rank = static_cast<std::size_t>(std::ceil(percentile * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return kth_smallest(values, rank);
}

std::vector<double> OodModel::calibration_distances() const {
  const std::size_t n = calibration_.rows();
  std::vector<double> out(n);
  std::vector<double> dists;
  dists.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dists.clear();
    auto anchor = calibration_.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dists.push_back(euclidean_distance(anchor, calibration_.row(j)));
    }
    out[i] = kth_smallest(dists, config_.k);
  }
  return out;
}

OodScore OodModel::score(std::span<const float> query) const {
  if (query.size() != calibration_.dim()) {
    throw Error(ErrorCode::dim_mismatch, "OOD query has dim " + std::to_string(query.size()) +
                                             ", expected " + std::to_string(calibration_.dim()));
  }
  const auto unit = l2_normalized(query);
  std::vector<double> dists(calibration_.rows());
  for (std::size_t j = 0; j < dists.size(); ++j) {
    dists[j] = euclidean_distance(unit, calibration_.row(j));
  }
  OodScore s;
  s.distance = kth_smallest(dists, config_.k);
  s.is_ood = is_ood(s.distance);
  return s;
}

bool OodModel::verify(double tolerance) const {
  const double recomputed =
      nearest_rank_percentile(calibration_distances(), config_.percentile);
  return std::abs(recomputed - threshold_) <= tolerance;
}

OodModel ood_calibrate(const EmbeddingMatrix& calibration, const OodConfig& cfg) {
  cfg.validate();
  if (calibration.rows() < cfg.k + 1) {
    throw Error(ErrorCode::too_few_calibration_rows,
                "OOD calibration needs at least k+1=" + std::to_string(cfg.k + 1) +
                    " rows, got " + std::to_string(calibration.rows()));
  }
  OodModel model(cfg, calibration.normalized_copy(), 0.0);
  model.threshold_ = nearest_rank_percentile(model.calibration_distances(), cfg.percentile);
  return model;
}

OodScore ood_score(const OodModel& model, std::span<const float> query) {
  return model.score(query);
}

void save_ood_model(const std::filesystem::path& dir, const OodModel& model) {
  std::filesystem::create_directories(dir);
  save_embeddings(dir / "ood_calibration.icladbin", model.calibration());
  nlohmann::ordered_json j;
  j["format"] = "iclad.ood.v1";
  j["k"] = model.config().k;
  j["percentile"] = model.config().percentile;
  j["threshold"] = model.threshold();
  j["dim"] = model.calibration().dim();
  j["rows"] = model.calibration().rows();
  std::ofstream out(dir / "ood_model.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + (dir / "ood_model.json").string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "write failure on ood_model.json");
}

OodModel load_ood_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "ood_model.json");
  if (!in) throw Error(ErrorCode::io, "cannot open " + (dir / "ood_model.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed, std::string("ood_model.json: ") + e.what());
  }
  OodConfig cfg;
  double threshold = 0.0;
  try {
    cfg.k = j.at("k").get<std::size_t>();
    cfg.percentile = j.at("percentile").get<double>();
    threshold = j.at("threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed, std::string("ood_model.json: ") + e.what());
  }
  cfg.validate();
  auto stored = load_embeddings(dir / "ood_calibration.icladbin");
  // Rows were written normalized; re-normalizing would perturb the distances.
  EmbeddingMatrix calibration(stored.dim(), stored.rows(),
                              {stored.data().begin(), stored.data().end()}, true);
  if (calibration.rows() < cfg.k + 1) {
    throw Error(ErrorCode::too_few_calibration_rows, "stored OOD calibration is too small");
  }
  OodModel model(cfg, std::move(calibration), threshold);
  if (!model.verify(1e-9)) {
    throw Error(ErrorCode::malformed,
                "stored OOD threshold does not match its calibration rows");
  }
  return model;
}

}  // namespace iclad
