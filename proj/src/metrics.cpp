#include "iclad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "iclad/error.hpp"

namespace iclad {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::length_mismatch, std::string(what) + ": lengths differ (" +
                                                std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
  if (a == 0) throw Error(ErrorCode::empty_input, std::string(what) + ": empty input");
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const auto denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

ClassificationMetrics compute_accuracy_macro_f1(std::span<const Label> labels,
                                                std::span<const Label> predictions) {
  check_lengths(labels.size(), predictions.size(), "accuracy/F1");
  ClassificationMetrics m;
  auto& c = m.confusion;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool actual_fake = labels[i] == Label::fake;
    const bool said_fake = predictions[i] == Label::fake;
    if (actual_fake) {
      (said_fake ? c.tp_fake : c.fn_fake)++;
    } else {
      (said_fake ? c.fp_fake : c.tn_fake)++;
    }
  }
  m.accuracy = static_cast<double>(c.tp_fake + c.tn_fake) / static_cast<double>(labels.size());
  // For the real class the roles of the off-diagonal counts swap.
  m.macro_f1 = (f1(c.tp_fake, c.fp_fake, c.fn_fake) + f1(c.tn_fake, c.fn_fake, c.fp_fake)) / 2.0;
  return m;
}

EerResult compute_eer(std::span<const double> scores, std::span<const Label> labels) {
  check_lengths(scores.size(), labels.size(), "EER");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (auto s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::invalid_argument, "EER: non-finite score");
  }
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  const auto n_fake = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), Label::fake));
  const auto n_real = labels.size() - n_fake;
  if (n_fake == 0 || n_real == 0) {
    throw Error(ErrorCode::single_class, "EER needs both real and fake samples");
  }

  // Walk cuts from below everything upward. Before the cut at position p,
  // every sample below p is called real.
  std::size_t fakes_below = 0;
  std::size_t reals_below = 0;
  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  auto consider = [&](double threshold) {
    const double fpr = static_cast<double>(n_real - reals_below) / static_cast<double>(n_real);
    const double fnr = static_cast<double>(fakes_below) / static_cast<double>(n_fake);
    const double gap = std::abs(fpr - fnr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {(fpr + fnr) / 2.0, threshold};
    }
  };

  const double lo = scores[order.front()];
  const double hi = scores[order.back()];
  consider(lo - 1.0);
  for (std::size_t p = 0; p < order.size();) {
    const double s = scores[order[p]];
    while (p < order.size() && scores[order[p]] == s) {
      (labels[order[p]] == Label::fake ? fakes_below : reals_below)++;
      ++p;
    }
    consider(p < order.size() ? s + (scores[order[p]] - s) / 2.0 : hi + 1.0);
  }
  return best;
}

namespace {

double beta_continued_fraction(double a, double b, double x) {
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);

  // Modified Lentz.
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const int m = i / 2;
    double numerator;
    if (i == 0) {
      numerator = 1.0;
    } else if (i % 2 == 0) {
      numerator = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + numerator * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + numerator / c;
    if (std::abs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1.0 - cd) < eps) return std::exp(log_front) * (f - 1.0) / a;
  }
  throw Error(ErrorCode::invalid_argument, "incomplete beta did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw Error(ErrorCode::invalid_argument, "incomplete beta: a, b must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::invalid_argument, "incomplete beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
  // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - beta_continued_fraction(b, a, 1.0 - x);
  return beta_continued_fraction(a, b, x);
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw Error(ErrorCode::invalid_argument, "t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_ttest(std::span<const int> correct_a, std::span<const int> correct_b) {
  check_lengths(correct_a.size(), correct_b.size(), "paired t-test");
  const std::size_t n = correct_a.size();
  if (n < 2) throw Error(ErrorCode::empty_input, "paired t-test needs at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    if ((correct_a[i] != 0 && correct_a[i] != 1) || (correct_b[i] != 0 && correct_b[i] != 1)) {
      throw Error(ErrorCode::invalid_argument, "paired t-test expects 0/1 correctness values");
    }
    d[i] = static_cast<double>(correct_a[i] - correct_b[i]);
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0.0) {
    throw Error(ErrorCode::zero_variance,
                "paired t-test undefined: the per-sample differences have zero variance");
  }
  TTestResult r;
  r.mean_difference = mean;
  r.df = n - 1;
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p_value = student_t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

std::vector<HistogramBin> export_logit_histogram(std::span<const double> scores,
                                                 std::span<const Label> labels, std::size_t bins) {
  check_lengths(scores.size(), labels.size(), "histogram");
  if (bins == 0) throw Error(ErrorCode::invalid_argument, "histogram needs at least one bin");
  for (auto s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::invalid_argument, "histogram: non-finite score");
  }
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(bins);

  std::vector<HistogramBin> out(bins);
  auto left = [&](std::size_t i) { return i == bins ? hi : lo + static_cast<double>(i) * width; };
  for (std::size_t i = 0; i < bins; ++i) out[i] = {left(i), left(i + 1), 0, 0};

  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double s = scores[k];
    std::size_t i = 0;
    if (width > 0.0) {
      i = std::min(static_cast<std::size_t>((s - lo) / width), bins - 1);
      // The division can land one bin off near an edge; settle on the edges
      // actually reported.
      while (i > 0 && s < out[i].left) --i;
      while (i + 1 < bins && s >= out[i + 1].left) ++i;
    }
    (labels[k] == Label::fake ? out[i].count_fake : out[i].count_real)++;
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const std::vector<HistogramBin>& bins) {
  out << "bin_left,bin_right,count_real,count_fake\n";
  const auto old_precision = out.precision(17);
  for (const auto& b : bins) {
    out << b.left << ',' << b.right << ',' << b.count_real << ',' << b.count_fake << '\n';
  }
  out.precision(old_precision);
}

}  // namespace iclad
