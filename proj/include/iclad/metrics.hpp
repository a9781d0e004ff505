#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "iclad/core.hpp"

namespace iclad {

/// Fake is the positive class.
struct ConfusionCounts {
  std::size_t tp_fake = 0;
  std::size_t fp_fake = 0;
  std::size_t fn_fake = 0;
  std::size_t tn_fake = 0;

  std::size_t total() const { return tp_fake + fp_fake + fn_fake + tn_fake; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  /// Unweighted mean of the real and fake F1; a class with no support on
  /// either side scores 0.
  double macro_f1 = 0.0;
  ConfusionCounts confusion;
};

ClassificationMetrics compute_accuracy_macro_f1(std::span<const Label> labels,
                                                std::span<const Label> predictions);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Higher score = more fake; a sample is called fake when its score is above
/// the threshold. Every cut between distinct scores is tried (thresholds are
/// the midpoints, plus one below and one above all scores). At the cut with
/// the smallest |FPR - FNR| (lowest threshold on ties) the EER is the mean of
/// the two rates. Depends only on the ordering of the scores.
EerResult compute_eer(std::span<const double> scores, std::span<const Label> labels);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  double mean_difference = 0.0;
};

/// Two-sided paired t-test on per-sample 0/1 correctness.
TTestResult paired_ttest(std::span<const int> correct_a, std::span<const int> correct_b);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count_real = 0;
  std::size_t count_fake = 0;
};

/// Equal-width bins over [min, max]. Bin i holds left_i <= s < left_{i+1},
/// the last bin also takes max. With a single distinct score everything
/// lands in bin 0.
std::vector<HistogramBin> export_logit_histogram(std::span<const double> scores,
                                                 std::span<const Label> labels, std::size_t bins);
/// Header "bin_left,bin_right,count_real,count_fake".
void write_histogram_csv(std::ostream& out, const std::vector<HistogramBin>& bins);

}  // namespace iclad
