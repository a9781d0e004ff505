#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iclad/metrics.hpp"
#include "iclad/router.hpp"

namespace iclad {

inline constexpr std::string_view kOverallDataset = "overall";

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;  // scored records (errors excluded)
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  /// Only when every scored record carries a detector score and both
  /// classes are present.
  std::optional<double> eer;
  ConfusionCounts confusion;
  std::size_t n_detector = 0;
  std::size_t n_alm = 0;
  std::size_t degraded_count = 0;
  std::size_t error_count = 0;
};

/// One report per dataset tag (sorted), then the overall report. Ground
/// truth comes from `manifest`; every record id must appear there.
std::vector<EvalReport> evaluate_records(const std::vector<InferenceRecord>& records,
                                         const DatasetManifest& manifest);

/// Paired t-test of per-query correctness between two result sets over the
/// ids both scored without error; the sets must cover the same ids.
TTestResult compare_results(const std::vector<InferenceRecord>& a,
                            const std::vector<InferenceRecord>& b, const DatasetManifest& manifest);

std::string reports_json(const std::vector<EvalReport>& reports,
                         const std::optional<TTestResult>& comparison = std::nullopt);
/// Aligned text table, one row per report.
std::string reports_table(const std::vector<EvalReport>& reports);

struct AblationCell {
  Strategy strategy = Strategy::pcr;
  RetrievalMode mode = RetrievalMode::cosine_topk;
  RoutingMode routing = RoutingMode::auto_route;

  /// "strategy/mode/routing"
  std::string key() const;
};

/// Cartesian product in strategy-major order.
std::vector<AblationCell> ablation_grid(const std::vector<Strategy>& strategies,
                                        const std::vector<RetrievalMode>& modes,
                                        const std::vector<RoutingMode>& routings);

struct AblationResult {
  AblationCell cell;
  /// Overall report; empty when the cell failed.
  std::optional<EvalReport> report;
  std::optional<std::string> error;
};

/// Runs every cell on `manifest` with `base`'s clients, cache and OOD model.
/// A failing cell records its error and the others still run; results keep
/// the grid order.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& grid,
                                         const DatasetManifest& manifest,
                                         const InferenceContext& base);

std::string ablation_json(const std::vector<AblationResult>& results);
std::string ablation_table(const std::vector<AblationResult>& results);

}  // namespace iclad
