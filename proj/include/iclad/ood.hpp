#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "iclad/embedding.hpp"

namespace iclad {

struct OodConfig {
  std::size_t k = 5;
  double percentile = 95.0;

  void validate() const;
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double percentile);

struct OodScore {
  double distance = 0.0;
  bool is_ood = false;
};

/// kNN out-of-distribution model over L2-normalized calibration embeddings.
///
/// The threshold is the configured nearest-rank percentile of each
/// calibration row's leave-one-out distance to its k-th nearest neighbour.
class OodModel {
 public:
  const OodConfig& config() const { return config_; }
  const EmbeddingMatrix& calibration() const { return calibration_; }
  double threshold() const { return threshold_; }

  /// Euclidean distance from the normalized query to its k-th nearest
  /// calibration row; OOD iff strictly above the threshold.
  OodScore score(std::span<const float> query) const;
  bool is_ood(double distance) const { return distance > threshold_; }

  /// Leave-one-out k-th neighbour distance of every calibration row.
  std::vector<double> calibration_distances() const;

  /// Recomputes the threshold from the calibration rows.
  bool verify(double tolerance = 0.0) const;

  friend OodModel ood_calibrate(const EmbeddingMatrix& calibration, const OodConfig& cfg);
  friend OodModel load_ood_model(const std::filesystem::path& dir);

 private:
  OodModel(OodConfig config, EmbeddingMatrix calibration, double threshold)
      : config_(config), calibration_(std::move(calibration)), threshold_(threshold) {}

  OodConfig config_;
  EmbeddingMatrix calibration_;
  double threshold_ = 0.0;
};

OodModel ood_calibrate(const EmbeddingMatrix& calibration, const OodConfig& cfg);

OodScore ood_score(const OodModel& model, std::span<const float> query);

/// Writes ood_model.json and ood_calibration.icladbin into `dir`.
void save_ood_model(const std::filesystem::path& dir, const OodModel& model);
/// Loads and re-verifies the threshold against the stored calibration rows.
OodModel load_ood_model(const std::filesystem::path& dir);

}  // namespace iclad
