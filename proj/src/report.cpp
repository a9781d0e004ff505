#include "iclad/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace iclad {

using nlohmann::ordered_json;

namespace {

struct Scored {
  const InferenceRecord* record;
  Label truth;
};

EvalReport report_for(std::string dataset, const std::vector<Scored>& rows, std::size_t errors) {
  EvalReport rep;
  rep.dataset = std::move(dataset);
  rep.error_count = errors;
  rep.n = rows.size();
  if (rows.empty()) return rep;

  std::vector<Label> truth, pred;
  std::vector<double> scores;
  bool all_scored = true;
  for (const auto& s : rows) {
    truth.push_back(s.truth);
    pred.push_back(s.record->verdict.decision);
    (s.record->route.route == Route::alm ? rep.n_alm : rep.n_detector)++;
    if (s.record->verdict.degraded()) ++rep.degraded_count;
    if (s.record->verdict.detector_score) {
      scores.push_back(*s.record->verdict.detector_score);
    } else {
      all_scored = false;
    }
  }
  const auto m = compute_accuracy_macro_f1(truth, pred);
  rep.accuracy = m.accuracy;
  rep.macro_f1 = m.macro_f1;
  rep.confusion = m.confusion;
  const bool both_classes = m.confusion.tp_fake + m.confusion.fn_fake > 0 &&
                            m.confusion.tn_fake + m.confusion.fp_fake > 0;
  if (all_scored && both_classes) rep.eer = compute_eer(scores, truth).eer;
  return rep;
}

std::unordered_map<std::string, const ManifestEntry*> index_manifest(const DatasetManifest& manifest) {
  std::unordered_map<std::string, const ManifestEntry*> out;
  for (const auto& e : manifest.entries()) out.emplace(e.audio.id, &e);
  return out;
}

void require_known_ids(const std::vector<InferenceRecord>& records,
                       const std::unordered_map<std::string, const ManifestEntry*>& truth) {
  std::vector<std::string> missing;
  for (const auto& r : records) {
    if (!truth.contains(r.query.id)) missing.push_back(r.query.id);
  }
  if (missing.empty()) return;
  std::string list;
  for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
  if (missing.size() > 20) list += ", ...";
  throw Error(ErrorCode::id_mismatch, std::to_string(missing.size()) +
                                          " result id(s) missing from the manifest: " + list);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ordered_json report_to_json(const EvalReport& r) {
  ordered_json j = {{"dataset", r.dataset},
                    {"n", r.n},
                    {"accuracy", r.accuracy},
                    {"macro_f1", r.macro_f1}};
  j["eer"] = r.eer ? ordered_json(*r.eer) : ordered_json(nullptr);
  j["confusion"] = {{"tp_fake", r.confusion.tp_fake},
                    {"fp_fake", r.confusion.fp_fake},
                    {"fn_fake", r.confusion.fn_fake},
                    {"tn_fake", r.confusion.tn_fake}};
  j["routing"] = {{"n_detector", r.n_detector}, {"n_alm", r.n_alm}};
  j["degraded_count"] = r.degraded_count;
  j["error_count"] = r.error_count;
  return j;
}

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      // First column left-aligned, numbers right-aligned.
      const auto pad = std::string(width[c] - row[c].size(), ' ');
      out << (c ? "  " : "") << (c ? pad + row[c] : row[c] + pad);
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) emit(row);
  return out.str();
}

std::vector<std::string> report_row(std::string first, const EvalReport& r) {
  return {std::move(first),
          std::to_string(r.n),
          fixed(r.accuracy),
          fixed(r.macro_f1),
          r.eer ? fixed(*r.eer) : "-",
          std::to_string(r.n_detector),
          std::to_string(r.n_alm),
          std::to_string(r.degraded_count),
          std::to_string(r.error_count)};
}

}  // namespace

std::vector<EvalReport> evaluate_records(const std::vector<InferenceRecord>& records,
                                         const DatasetManifest& manifest) {
  const auto truth = index_manifest(manifest);
  require_known_ids(records, truth);

  std::map<std::string, std::vector<Scored>> by_dataset;
  std::map<std::string, std::size_t> errors_by_dataset;
  std::vector<Scored> all;
  std::size_t errors = 0;
  for (const auto& r : records) {
    const auto* m = truth.at(r.query.id);
    const auto& tag = m->audio.dataset;
    by_dataset[tag];
    if (r.error) {
      ++errors;
      ++errors_by_dataset[tag];
      continue;
    }
    by_dataset[tag].push_back({&r, m->label});
    all.push_back({&r, m->label});
  }
  std::vector<EvalReport> out;
  for (const auto& [tag, rows] : by_dataset) {
    out.push_back(report_for(tag, rows, errors_by_dataset[tag]));
  }
  out.push_back(report_for(std::string(kOverallDataset), all, errors));
  return out;
}

TTestResult compare_results(const std::vector<InferenceRecord>& a,
                            const std::vector<InferenceRecord>& b, const DatasetManifest& manifest) {
  const auto truth = index_manifest(manifest);
  require_known_ids(a, truth);
  require_known_ids(b, truth);
  std::unordered_map<std::string, const InferenceRecord*> b_by_id;
  for (const auto& r : b) b_by_id.emplace(r.query.id, &r);
  if (b_by_id.size() != a.size()) {
    throw Error(ErrorCode::id_mismatch, "compared result sets cover different ids");
  }
  std::vector<int> ca, cb;
  for (const auto& ra : a) {
    auto it = b_by_id.find(ra.query.id);
    if (it == b_by_id.end()) {
      throw Error(ErrorCode::id_mismatch, "id '" + ra.query.id + "' is absent from the second result set");
    }
    const auto& rb = *it->second;
    if (ra.error || rb.error) continue;
    const Label t = truth.at(ra.query.id)->label;
    ca.push_back(ra.verdict.decision == t ? 1 : 0);
    cb.push_back(rb.verdict.decision == t ? 1 : 0);
  }
  return paired_ttest(ca, cb);
}

std::string reports_json(const std::vector<EvalReport>& reports,
                         const std::optional<TTestResult>& comparison) {
  ordered_json j;
  j["reports"] = ordered_json::array();
  for (const auto& r : reports) j["reports"].push_back(report_to_json(r));
  if (comparison) {
    j["paired_ttest"] = {{"t", comparison->t},
                         {"df", comparison->df},
                         {"p_value", comparison->p_value},
                         {"mean_difference", comparison->mean_difference}};
  }
  return j.dump(2);
}

std::string reports_table(const std::vector<EvalReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) rows.push_back(report_row(r.dataset, r));
  return render_table({"dataset", "n", "accuracy", "macro_f1", "eer", "n_detector", "n_alm",
                       "degraded", "errors"},
                      rows);
}

std::string AblationCell::key() const {
  return std::string(to_string(strategy)) + "/" + std::string(to_string(mode)) + "/" +
         std::string(to_string(routing));
}

std::vector<AblationCell> ablation_grid(const std::vector<Strategy>& strategies,
                                        const std::vector<RetrievalMode>& modes,
                                        const std::vector<RoutingMode>& routings) {
  std::vector<AblationCell> out;
  for (auto s : strategies) {
    for (auto m : modes) {
      for (auto r : routings) out.push_back({s, m, r});
    }
  }
  return out;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& grid,
                                         const DatasetManifest& manifest,
                                         const InferenceContext& base) {
  std::vector<AblationResult> out;
  out.reserve(grid.size());
  for (const auto& cell : grid) {
    AblationResult res{cell, std::nullopt, std::nullopt};
    try {
      InferenceContext ctx = base;
      ctx.strategy = cell.strategy;
      ctx.retrieval.mode = cell.mode;
      ctx.routing = cell.routing;
      const auto records = infer_batch(manifest, ctx);
      res.report = evaluate_records(records, manifest).back();
    } catch (const Error& e) {
      res.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    out.push_back(std::move(res));
  }
  return out;
}

std::string ablation_json(const std::vector<AblationResult>& results) {
  ordered_json j = ordered_json::array();
  for (const auto& r : results) {
    ordered_json c = {{"cell", r.cell.key()},
                      {"strategy", to_string(r.cell.strategy)},
                      {"retrieval", to_string(r.cell.mode)},
                      {"routing", to_string(r.cell.routing)}};
    if (r.report) c["report"] = report_to_json(*r.report);
    if (r.error) c["error"] = *r.error;
    j.push_back(std::move(c));
  }
  return j.dump(2);
}

std::string ablation_table(const std::vector<AblationResult>& results) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : results) {
    if (r.report) {
      rows.push_back(report_row(r.cell.key(), *r.report));
    } else {
      rows.push_back({r.cell.key(), "-", "-", "-", "-", "-", "-", "-", "failed"});
    }
  }
  return render_table({"cell", "n", "accuracy", "macro_f1", "eer", "n_detector", "n_alm",
                       "degraded", "errors"},
                      rows);
}

}  // namespace iclad
