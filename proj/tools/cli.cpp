#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>
#include <toml.hpp>

#include "iclad/cache_store.hpp"
#include "iclad/clients.hpp"
#include "iclad/evidence_builder.hpp"
#include "iclad/http_clients.hpp"
#include "iclad/metrics.hpp"
#include "iclad/replay.hpp"
#include "iclad/report.hpp"

namespace iclad::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::invalid_argument:
    case ErrorCode::k_too_large:
      return kConfigError;
    case ErrorCode::transport:
    case ErrorCode::authentication:
    case ErrorCode::attachment_too_large:
    case ErrorCode::replay_miss:
    case ErrorCode::not_icl_shaped:
    case ErrorCode::unreadable_audio:
      return kClientError;
    default:
      return kDataError;
  }
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::config, msg); }

std::optional<BalancedOrder> parse_order(std::string_view text) {
  if (text == "interleave_real_first") return BalancedOrder::interleave_real_first;
  if (text == "interleave_fake_first") return BalancedOrder::interleave_fake_first;
  if (text == "grouped_real_then_fake") return BalancedOrder::grouped_real_then_fake;
  return std::nullopt;
}

std::string_view to_string(BalancedOrder order) {
  switch (order) {
    case BalancedOrder::interleave_real_first: return "interleave_real_first";
    case BalancedOrder::interleave_fake_first: return "interleave_fake_first";
    case BalancedOrder::grouped_real_then_fake: return "grouped_real_then_fake";
  }
  return "?";
}

template <typename T, typename Parse>
T parse_or_fail(std::string_view text, Parse parse, const char* what) {
  auto v = parse(text);
  if (!v) config_error("unknown " + std::string(what) + " '" + std::string(text) + "'");
  return *v;
}

// ---------------------------------------------------------------------------
// TOML

class TomlReader {
 public:
  TomlReader(const toml::table& root, fs::path base) : root_(root), base_(std::move(base)) {}

  template <typename T>
  void get(std::string_view section, std::string_view key, T& target) {
    const auto* node = lookup(section, key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) fail(section, key, "a boolean");
      target = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value<std::int64_t>();
      if (!v || *v < 0) fail(section, key, "a non-negative integer");
      target = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(section, key, "a number");
      target = *v;
    } else {
      auto v = node->value<std::string>();
      if (!v) fail(section, key, "a string");
      target = *v;
    }
  }

  void path(std::string_view section, std::string_view key, fs::path& target) {
    std::string s;
    get(section, key, s);
    if (!s.empty()) target = resolve(s);
  }

  void path_list(std::string_view section, std::string_view key, std::vector<fs::path>& target) {
    const auto* node = lookup(section, key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr) fail(section, key, "an array of strings");
    target.clear();
    for (const auto& el : *arr) {
      auto v = el.value<std::string>();
      if (!v) fail(section, key, "an array of strings");
      target.push_back(resolve(*v));
    }
  }

  /// Rejects keys nobody asked for; a typo should not silently fall back to a default.
  void check_unknown() const {
    for (const auto& [k, v] : root_) {
      const std::string key(k.str());
      if (const auto* sub = v.as_table()) {
        for (const auto& [k2, v2] : *sub) {
          (void)v2;
          const std::string full = key + "." + std::string(k2.str());
          if (!seen_.contains(full)) config_error("unknown config key '" + full + "'");
        }
      } else if (!seen_.contains(key)) {
        config_error("unknown config key '" + key + "'");
      }
    }
  }

 private:
  const toml::node* lookup(std::string_view section, std::string_view key) {
    seen_.insert(section.empty() ? std::string(key) : std::string(section) + "." + std::string(key));
    if (section.empty()) return root_.get(key);
    const auto* sub = root_.get_as<toml::table>(section);
    return sub ? sub->get(key) : nullptr;
  }

  [[noreturn]] void fail(std::string_view section, std::string_view key, const char* expected) const {
    config_error("config key '" + (section.empty() ? "" : std::string(section) + ".") + std::string(key) +
                 "' must be " + expected);
  }

  fs::path resolve(const std::string& s) const {
    fs::path p(s);
    return p.is_absolute() || base_.empty() ? p : base_ / p;
  }

  const toml::table& root_;
  fs::path base_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(std::string_view toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    config_error(msg.str());
  }
  RunConfig cfg;
  TomlReader r(root, base_dir);
  std::string s;

  r.get("", "seed", cfg.seed);
  r.get("", "jobs", cfg.jobs);
  s.clear();
  r.get("", "strategy", s);
  if (!s.empty()) cfg.strategy = parse_or_fail<Strategy>(s, parse_strategy, "strategy");
  s.clear();
  r.get("", "routing", s);
  if (!s.empty()) cfg.routing = parse_or_fail<RoutingMode>(s, parse_routing_mode, "routing mode");

  r.path("paths", "cache", cfg.paths.cache);
  r.path("paths", "ood", cfg.paths.ood);
  r.path("paths", "manifest", cfg.paths.manifest);
  r.path("paths", "results", cfg.paths.results);
  r.path("paths", "replay_log", cfg.paths.replay_log);
  r.path("paths", "templates", cfg.paths.templates);
  r.path("paths", "out", cfg.paths.out);
  r.path_list("paths", "pool", cfg.paths.pool);

  r.get("ood", "k", cfg.ood.k);
  r.get("ood", "percentile", cfg.ood.percentile);
  r.get("ood", "calibration_dataset", cfg.calibration_dataset);

  r.get("retrieval", "k_total", cfg.retrieval.k_total);
  r.get("retrieval", "per_class", cfg.retrieval.per_class);
  s.clear();
  r.get("retrieval", "mode", s);
  if (!s.empty()) cfg.retrieval.mode = parse_or_fail<RetrievalMode>(s, parse_retrieval_mode, "retrieval mode");
  r.get("retrieval", "mmr_lambda", cfg.retrieval.mmr_lambda);
  s.clear();
  r.get("retrieval", "order", s);
  if (!s.empty()) cfg.retrieval.order = parse_or_fail<BalancedOrder>(s, parse_order, "retrieval order");
  r.get("retrieval", "allow_unbalanced", cfg.retrieval.allow_unbalanced);

  r.get("alm", "client", cfg.alm.client);
  r.get("alm", "record", cfg.alm.record);
  r.get("alm", "url", cfg.alm.url);
  r.get("alm", "path", cfg.alm.path);
  r.get("alm", "timeout_s", cfg.alm.timeout_s);
  r.get("alm", "max_in_flight", cfg.alm.max_in_flight);

  r.get("detector", "client", cfg.detector.client);
  r.get("detector", "url", cfg.detector.url);
  r.path("detector", "table", cfg.detector.table);
  r.get("detector", "model_tag", cfg.detector.model_tag);

  r.get("text_embedder", "client", cfg.text_embedder.client);
  r.get("text_embedder", "url", cfg.text_embedder.url);
  r.get("text_embedder", "dim", cfg.text_embedder.dim);
  r.get("text_embedder", "model_tag", cfg.text_embedder.model_tag);

  r.get("build", "n_each", cfg.build.n_each);
  r.get("build", "max_attempts", cfg.build.max_attempts);
  std::size_t stop_after = 0;
  bool has_stop = root["build"]["stop_after"].is_value();
  r.get("build", "stop_after", stop_after);
  if (has_stop) cfg.build.stop_after = stop_after;

  r.check_unknown();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

std::string config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["strategy"] = iclad::to_string(c.strategy);
  j["routing"] = iclad::to_string(c.routing);
  std::vector<std::string> pool;
  for (const auto& p : c.paths.pool) pool.push_back(p.string());
  j["paths"] = {{"cache", c.paths.cache.string()},       {"ood", c.paths.ood.string()},
                {"manifest", c.paths.manifest.string()}, {"results", c.paths.results.string()},
                {"replay_log", c.paths.replay_log.string()}, {"templates", c.paths.templates.string()},
                {"out", c.paths.out.string()},           {"pool", pool}};
  j["ood"] = {{"k", c.ood.k}, {"percentile", c.ood.percentile},
              {"calibration_dataset", c.calibration_dataset}};
  j["retrieval"] = {{"k_total", c.retrieval.k_total},
                    {"per_class", c.retrieval.per_class},
                    {"mode", iclad::to_string(c.retrieval.mode)},
                    {"mmr_lambda", c.retrieval.mmr_lambda},
                    {"order", to_string(c.retrieval.order)},
                    {"allow_unbalanced", c.retrieval.allow_unbalanced}};
  j["alm"] = {{"client", c.alm.client},       {"record", c.alm.record},
              {"url", c.alm.url},             {"path", c.alm.path},
              {"timeout_s", c.alm.timeout_s}, {"max_in_flight", c.alm.max_in_flight}};
  j["detector"] = {{"client", c.detector.client},
                   {"url", c.detector.url},
                   {"table", c.detector.table.string()},
                   {"model_tag", c.detector.model_tag}};
  j["text_embedder"] = {{"client", c.text_embedder.client},
                        {"url", c.text_embedder.url},
                        {"dim", c.text_embedder.dim},
                        {"model_tag", c.text_embedder.model_tag}};
  j["build"] = {{"n_each", c.build.n_each}, {"max_attempts", c.build.max_attempts}};
  j["build"]["stop_after"] =
      c.build.stop_after ? nlohmann::ordered_json(*c.build.stop_after) : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

namespace {

// ---------------------------------------------------------------------------
// Clients

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) config_error(std::string(what) + " path is not set");
  if (!fs::exists(p)) config_error(std::string(what) + " not found: " + p.string());
}

struct Clients {
  std::unique_ptr<ReplayLog> replay_log;
  std::unique_ptr<AlmClient> base_alm;
  std::unique_ptr<AlmClient> alm;
  std::unique_ptr<DetectorClient> detector;
  std::unique_ptr<TextEmbedder> text_embedder;
};

void make_alm(const RunConfig& cfg, const std::unordered_map<std::string, Label>& hidden_labels,
              Clients& c) {
  const auto& a = cfg.alm;
  if (a.client == "replay" || a.record) {
    if (cfg.paths.replay_log.empty()) config_error("alm client '" + a.client + "' needs a replay log");
    if (a.client == "replay") require_file(cfg.paths.replay_log, "replay log");
    c.replay_log = std::make_unique<ReplayLog>(cfg.paths.replay_log);
  }
  if (a.client == "replay") {
    if (a.record) config_error("--record makes no sense with the replay client");
    c.alm = std::make_unique<ReplayAlm>(*c.replay_log);
    return;
  }
  if (a.client == "mock") {
    c.base_alm = std::make_unique<MockAlm>(hidden_labels);
  } else if (a.client == "http") {
    if (a.url.empty()) config_error("alm client 'http' needs alm.url");
    HttpAlm::Options opts;
    opts.endpoint = {a.url, a.path, env_or_empty(kAlmKeyEnv), std::chrono::seconds(a.timeout_s)};
    opts.max_in_flight = a.max_in_flight;
    c.base_alm = std::make_unique<HttpAlm>(std::move(opts));
  } else {
    config_error("unknown alm client '" + a.client + "' (http, mock, replay)");
  }
  if (a.record) {
    c.alm = std::make_unique<RecordingAlm>(*c.base_alm, *c.replay_log);
  } else {
    c.alm = std::move(c.base_alm);
  }
}

void make_detector(const RunConfig& cfg, Clients& c) {
  const auto& d = cfg.detector;
  if (d.client == "table") {
    require_file(d.table, "detector table");
    c.detector = std::make_unique<TableDetector>(TableDetector::load_table(d.table));
  } else if (d.client == "sidecar") {
    if (d.url.empty()) config_error("detector client 'sidecar' needs detector.url");
    SidecarDetector::Options opts;
    opts.endpoint = {d.url, "/embed", env_or_empty(kSidecarTokenEnv), std::chrono::seconds(120)};
    opts.model_tag = d.model_tag;
    c.detector = std::make_unique<SidecarDetector>(std::move(opts));
  } else {
    config_error("unknown detector client '" + d.client + "' (sidecar, table)");
  }
}

void make_text_embedder(const RunConfig& cfg, Clients& c) {
  const auto& t = cfg.text_embedder;
  if (t.client == "hash") {
    if (t.dim == 0) config_error("text_embedder.dim must be positive");
    c.text_embedder = std::make_unique<HashTextEmbedder>(t.dim);
  } else if (t.client == "sidecar") {
    if (t.url.empty()) config_error("text embedder client 'sidecar' needs text_embedder.url");
    SidecarTextEmbedder::Options opts;
    opts.endpoint = {t.url, "/embed_text", env_or_empty(kSidecarTokenEnv), std::chrono::seconds(120)};
    opts.model_tag = t.model_tag;
    c.text_embedder = std::make_unique<SidecarTextEmbedder>(std::move(opts));
  } else {
    config_error("unknown text embedder client '" + t.client + "' (hash, sidecar)");
  }
}

TemplateSet load_templates(const RunConfig& cfg) {
  const auto dir = cfg.paths.templates.empty() ? TemplateSet::default_dir() : cfg.paths.templates;
  if (!fs::is_directory(dir)) config_error("template directory not found: " + dir.string());
  auto set = TemplateSet::load(dir);
  return set;
}

fs::path ood_dir(const RunConfig& cfg) { return cfg.paths.ood.empty() ? cfg.paths.cache : cfg.paths.ood; }

EmbeddingMatrix text_index_for(const OfflineCache& cache, TextEmbedder& embedder) {
  std::vector<std::string> texts;
  texts.reserve(cache.size());
  for (std::size_t r = 0; r < cache.embeddings().rows(); ++r) {
    texts.push_back(cache.entry_for_row(r).evidence.r_reconciled);
  }
  return embedder.embed(texts);
}

std::unordered_map<std::string, Label> labels_of(const OfflineCache& cache) {
  std::unordered_map<std::string, Label> out;
  for (const auto& e : cache.entries()) out.emplace(e.audio.id, e.label);
  return out;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto out = p;
  out.replace_extension(suffix);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Commands

int cmd_build_cache(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.paths.pool.empty()) config_error("no pool manifests given (--pool)");
  if (cfg.paths.cache.empty()) config_error("no cache output directory given (--cache)");
  std::vector<DatasetManifest> sources;
  for (const auto& p : cfg.paths.pool) {
    require_file(p, "pool manifest");
    sources.push_back(load_manifest(p));
  }
  std::optional<DatasetManifest> pool;
  if (cfg.build.n_each > 0) {
    if (sources.size() != 2) config_error("--n-each needs exactly two pool manifests (anchor, target)");
    pool = compose_rag_pool(sources[0], sources[1], cfg.build.n_each, cfg.seed);
  } else if (sources.size() == 1) {
    pool = std::move(sources.front());
  } else {
    std::vector<ManifestEntry> all;
    for (const auto& s : sources) all.insert(all.end(), s.entries().begin(), s.entries().end());
    pool = DatasetManifest("pool", std::move(all));
  }

  std::unordered_map<std::string, Label> hidden;
  for (const auto& e : pool->entries()) hidden.emplace(e.audio.id, e.label);
  Clients c;
  make_alm(cfg, hidden, c);
  make_detector(cfg, c);
  const auto templates = load_templates(cfg);

  BuildOptions opts;
  opts.max_attempts = cfg.build.max_attempts;
  opts.stop_after = cfg.build.stop_after;
  opts.jobs = cfg.jobs;
  const auto s = build_cache(*pool, *c.alm, *c.detector, templates, cfg.paths.cache, opts);

  out << "pool: " << pool->size() << " entries\n"
      << "reconciled: " << s.reconciled << "\n"
      << "failed: " << s.failed << "\n"
      << s.pending << " pending\n"
      << "cache rows: " << s.cache_rows << "\n";
  if (s.failed > 0) err << "warning: " << s.failed << " entries failed; see job_state.json\n";
  if (s.cache_rows == 0) err << "warning: no entry was reconciled; no cache files written\n";
  return kOk;
}

int cmd_calibrate_ood(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.paths.cache, "cache directory");
  const auto cache = read_cache(cfg.paths.cache);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < cache.embeddings().rows(); ++r) {
    if (cfg.calibration_dataset.empty() ||
        cache.entry_for_row(r).audio.dataset == cfg.calibration_dataset) {
      rows.push_back(r);
    }
  }
  if (rows.empty()) {
    config_error("no cache rows carry calibration dataset tag '" + cfg.calibration_dataset + "'");
  }
  const auto model = ood_calibrate(cache.embeddings().select(rows), cfg.ood);
  const auto dir = ood_dir(cfg);
  save_ood_model(dir, model);
  out << "calibration rows: " << rows.size() << "\n"
      << "k: " << cfg.ood.k << ", percentile: " << cfg.ood.percentile << "\n"
      << "threshold: " << model.threshold() << "\n"
      << "wrote " << dir.string() << "\n";
  return kOk;
}

struct Loaded {
  OfflineCache cache;
  std::optional<OodModel> ood;
  TemplateSet templates;
  Clients clients;
  std::optional<EmbeddingMatrix> text_index;
};

void load_inference_inputs(const RunConfig& cfg, bool need_text_index, Loaded& l) {
  require_file(cfg.paths.cache, "cache directory");
  l.cache = read_cache(cfg.paths.cache);
  require_file(ood_dir(cfg) / "ood_model.json", "OOD model");
  l.ood = load_ood_model(ood_dir(cfg));
  l.templates = load_templates(cfg);
  make_alm(cfg, labels_of(l.cache), l.clients);
  make_detector(cfg, l.clients);
  if (need_text_index) {
    make_text_embedder(cfg, l.clients);
    l.text_index = text_index_for(l.cache, *l.clients.text_embedder);
  }
}

InferenceContext context_for(const RunConfig& cfg, Loaded& l) {
  return InferenceContext{l.cache,
                          *l.ood,
                          l.templates,
                          *l.clients.alm,
                          *l.clients.detector,
                          cfg.retrieval,
                          cfg.strategy,
                          cfg.routing,
                          l.text_index ? &*l.text_index : nullptr,
                          cfg.jobs};
}

int cmd_infer(const RunConfig& cfg, bool timings, std::ostream& out, std::ostream& err) {
  require_file(cfg.paths.manifest, "query manifest");
  if (cfg.paths.results.empty()) config_error("no results path given (--results)");
  cfg.retrieval.validate();
  const auto manifest = load_manifest(cfg.paths.manifest);
  Loaded l;
  load_inference_inputs(cfg, cfg.retrieval.mode == RetrievalMode::mmr, l);
  const auto ctx = context_for(cfg, l);

  const auto records = infer_batch(manifest, ctx);
  if (cfg.paths.results.has_parent_path()) fs::create_directories(cfg.paths.results.parent_path());
  save_results(cfg.paths.results, records, timings);
  const auto summary = summarize(records);
  const auto summary_text = summary_json(summary);
  write_text(sibling(cfg.paths.results, ".summary.json"), summary_text + "\n");
  out << summary_text << "\n";
  if (summary.errors > 0) err << "warning: " << summary.errors << " queries failed; see the error field\n";
  return kOk;
}

struct ScoredLabels {
  std::vector<double> scores;
  std::vector<Label> labels;
};

ScoredLabels histogram_input(const std::vector<InferenceRecord>& records,
                             const DatasetManifest& manifest, bool use_logit) {
  ScoredLabels s;
  for (const auto& r : records) {
    const auto* m = manifest.find(r.query.id);
    if (!m) throw Error(ErrorCode::id_mismatch, "result id '" + r.query.id + "' is not in the manifest");
    const auto& v = use_logit ? r.verdict.raw_logit : r.verdict.detector_score;
    if (r.error || !v) continue;
    s.scores.push_back(*v);
    s.labels.push_back(m->label);
  }
  if (s.scores.empty()) {
    throw Error(ErrorCode::empty_input,
                std::string("no result carries a detector ") + (use_logit ? "logit" : "score"));
  }
  return s;
}

void write_histogram(const fs::path& path, const std::vector<InferenceRecord>& records,
                     const DatasetManifest& manifest, std::size_t bins, bool use_logit) {
  const auto in = histogram_input(records, manifest, use_logit);
  std::ostringstream csv;
  write_histogram_csv(csv, export_logit_histogram(in.scores, in.labels, bins));
  write_text(path, csv.str());
}

struct EvalFlags {
  std::string compare;
  std::string histogram;
  std::size_t bins = 20;
  bool use_logit = false;
  std::string report;
};

int cmd_evaluate(const RunConfig& cfg, const EvalFlags& f, std::ostream& out, std::ostream& err) {
  require_file(cfg.paths.results, "results file");
  require_file(cfg.paths.manifest, "manifest");
  const auto manifest = load_manifest(cfg.paths.manifest);
  const auto records = load_results(cfg.paths.results);
  const auto reports = evaluate_records(records, manifest);

  std::optional<TTestResult> ttest;
  if (!f.compare.empty()) {
    require_file(f.compare, "comparison results file");
    try {
      ttest = compare_results(records, load_results(f.compare), manifest);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::zero_variance) throw;
      err << "warning: " << e.what() << "\n";
    }
  }
  const fs::path report_path = f.report.empty() ? sibling(cfg.paths.results, ".report.json") : fs::path(f.report);
  write_text(report_path, reports_json(reports, ttest) + "\n");
  out << reports_table(reports);
  if (ttest) {
    out << "paired t-test: t = " << ttest->t << ", df = " << ttest->df << ", p = " << ttest->p_value
        << "\n";
  }
  if (!f.histogram.empty()) write_histogram(f.histogram, records, manifest, f.bins, f.use_logit);
  return kOk;
}

struct AblateFlags {
  std::vector<std::string> strategies;
  std::vector<std::string> modes;
  std::vector<std::string> routings;
};

int cmd_ablate(const RunConfig& cfg, const AblateFlags& f, std::ostream& out) {
  require_file(cfg.paths.manifest, "query manifest");
  std::vector<Strategy> strategies;
  for (const auto& s : f.strategies) strategies.push_back(parse_or_fail<Strategy>(s, parse_strategy, "strategy"));
  if (strategies.empty()) strategies.push_back(cfg.strategy);
  std::vector<RetrievalMode> modes;
  for (const auto& s : f.modes) modes.push_back(parse_or_fail<RetrievalMode>(s, parse_retrieval_mode, "retrieval mode"));
  if (modes.empty()) modes.push_back(cfg.retrieval.mode);
  std::vector<RoutingMode> routings;
  for (const auto& s : f.routings) routings.push_back(parse_or_fail<RoutingMode>(s, parse_routing_mode, "routing mode"));
  if (routings.empty()) routings.push_back(cfg.routing);

  const auto grid = ablation_grid(strategies, modes, routings);
  const bool any_mmr = std::find(modes.begin(), modes.end(), RetrievalMode::mmr) != modes.end();
  const auto manifest = load_manifest(cfg.paths.manifest);
  Loaded l;
  load_inference_inputs(cfg, any_mmr, l);
  const auto results = run_ablation(grid, manifest, context_for(cfg, l));

  if (!cfg.paths.out.empty()) write_text(cfg.paths.out / "ablation.json", ablation_json(results) + "\n");
  out << ablation_table(results);
  return kOk;
}

int cmd_export_hist(const RunConfig& cfg, const EvalFlags& f, std::ostream& out) {
  require_file(cfg.paths.results, "results file");
  require_file(cfg.paths.manifest, "manifest");
  if (f.histogram.empty()) config_error("no output CSV given (--out)");
  const auto manifest = load_manifest(cfg.paths.manifest);
  write_histogram(f.histogram, load_results(cfg.paths.results), manifest, f.bins, f.use_logit);
  out << "wrote " << f.histogram << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Flag plumbing: every override is optional so that only flags actually given
// replace config values.

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> templates;
  std::optional<std::string> cache, ood, manifest, results, replay_log, out;
  std::vector<std::string> pool;
  std::optional<std::string> strategy, routing, retrieval_mode, order;
  std::optional<std::size_t> k_total, per_class;
  std::optional<double> mmr_lambda;
  std::optional<std::size_t> ood_k;
  std::optional<double> percentile;
  std::optional<std::string> calibration_dataset;
  std::optional<std::string> alm_client, alm_url, alm_path;
  std::optional<int> alm_timeout;
  std::optional<std::string> detector_client, detector_url, detector_table, detector_model_tag;
  std::optional<std::string> text_client, text_url;
  std::optional<std::size_t> text_dim;
  std::optional<std::size_t> n_each, stop_after;
  std::optional<int> max_attempts;
  bool record = false;
  bool allow_unbalanced = false;
};

template <typename T, typename U>
void apply(const std::optional<T>& v, U& target) {
  if (v) target = *v;
}

void apply_overrides(const Overrides& o, RunConfig& c) {
  apply(o.seed, c.seed);
  apply(o.jobs, c.jobs);
  apply(o.templates, c.paths.templates);
  apply(o.cache, c.paths.cache);
  apply(o.ood, c.paths.ood);
  apply(o.manifest, c.paths.manifest);
  apply(o.results, c.paths.results);
  apply(o.replay_log, c.paths.replay_log);
  apply(o.out, c.paths.out);
  if (!o.pool.empty()) c.paths.pool.assign(o.pool.begin(), o.pool.end());
  if (o.strategy) c.strategy = parse_or_fail<Strategy>(*o.strategy, parse_strategy, "strategy");
  if (o.routing) c.routing = parse_or_fail<RoutingMode>(*o.routing, parse_routing_mode, "routing mode");
  if (o.retrieval_mode) {
    c.retrieval.mode = parse_or_fail<RetrievalMode>(*o.retrieval_mode, parse_retrieval_mode, "retrieval mode");
  }
  if (o.order) c.retrieval.order = parse_or_fail<BalancedOrder>(*o.order, parse_order, "retrieval order");
  apply(o.k_total, c.retrieval.k_total);
  apply(o.per_class, c.retrieval.per_class);
  apply(o.mmr_lambda, c.retrieval.mmr_lambda);
  if (o.allow_unbalanced) c.retrieval.allow_unbalanced = true;
  apply(o.ood_k, c.ood.k);
  apply(o.percentile, c.ood.percentile);
  apply(o.calibration_dataset, c.calibration_dataset);
  apply(o.alm_client, c.alm.client);
  apply(o.alm_url, c.alm.url);
  apply(o.alm_path, c.alm.path);
  apply(o.alm_timeout, c.alm.timeout_s);
  if (o.record) c.alm.record = true;
  apply(o.detector_client, c.detector.client);
  apply(o.detector_url, c.detector.url);
  apply(o.detector_table, c.detector.table);
  apply(o.detector_model_tag, c.detector.model_tag);
  apply(o.text_client, c.text_embedder.client);
  apply(o.text_url, c.text_embedder.url);
  apply(o.text_dim, c.text_embedder.dim);
  apply(o.n_each, c.build.n_each);
  apply(o.max_attempts, c.build.max_attempts);
  if (o.stop_after) c.build.stop_after = *o.stop_after;
}

void add_client_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--alm-client", o.alm_client, "ALM client: http, mock or replay");
  sub->add_option("--alm-url", o.alm_url, "ALM base URL, e.g. http://127.0.0.1:9000");
  sub->add_option("--alm-path", o.alm_path, "ALM request path");
  sub->add_option("--alm-timeout", o.alm_timeout, "ALM request timeout in seconds");
  sub->add_option("--replay-log", o.replay_log, "Replay log (JSONL) read by the replay client or appended by --record");
  sub->add_flag("--record", o.record, "Record every live ALM response into the replay log");
  sub->add_option("--detector-client", o.detector_client, "Detector client: sidecar or table");
  sub->add_option("--detector-url", o.detector_url, "Embedding sidecar base URL");
  sub->add_option("--detector-table", o.detector_table, "JSONL table of detector results (table client)");
  sub->add_option("--detector-model-tag", o.detector_model_tag, "Sidecar model tag for detector embeddings");
  sub->add_option("--templates", o.templates, "Prompt template directory");
}

void add_inference_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--cache", o.cache, "Cache directory");
  sub->add_option("--ood", o.ood, "OOD model directory (default: the cache directory)");
  sub->add_option("--manifest", o.manifest, "Query manifest (JSONL)");
  sub->add_option("--strategy", o.strategy, "Prompting strategy: zero_shot, audio_label, simple, knowledge_guided, pcr");
  sub->add_option("--routing", o.routing, "Routing: auto, detector (force) or alm (force)");
  sub->add_option("--retrieval-mode", o.retrieval_mode, "Retrieval: cosine_topk or mmr");
  sub->add_option("--k-total", o.k_total, "Exemplars per prompt");
  sub->add_option("--per-class", o.per_class, "Exemplars per class (cosine_topk)");
  sub->add_option("--mmr-lambda", o.mmr_lambda, "MMR relevance weight in [0, 1]");
  sub->add_option("--order", o.order,
                  "Exemplar order: interleave_real_first, interleave_fake_first, grouped_real_then_fake");
  sub->add_flag("--allow-unbalanced", o.allow_unbalanced, "Use fewer exemplars when a class is short");
  sub->add_option("--text-embedder", o.text_client, "Text embedder for MMR: hash or sidecar");
  sub->add_option("--text-embedder-url", o.text_url, "Sidecar base URL for text embeddings");
  sub->add_option("--text-dim", o.text_dim, "Dimension of the hash text embedder");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"In-context audio deepfake detection: Phase-1 cache builder, routed inference and evaluation."};
  app.name("iclad");
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  bool print_config = false;
  app.add_option("--config", o.config, "TOML run configuration; flags override its values");
  app.add_option("--seed", o.seed, "Seed for pool sampling");
  app.add_option("--jobs", o.jobs, "Concurrent client requests");
  app.add_flag("--print-config", print_config, "Print the effective configuration as JSON and exit");

  auto* build = app.add_subcommand("build-cache", "Phase-1: build the exemplar cache from pool manifests");
  build->add_option("--pool", o.pool, "Pool manifest(s); with --n-each: anchor then target");
  build->add_option("--cache", o.cache, "Output cache directory");
  build->add_option("--n-each", o.n_each, "Sample this many entries from each of the two pool manifests");
  build->add_option("--max-attempts", o.max_attempts, "Attempts per entry on transient failures");
  build->add_option("--stop-after", o.stop_after, "Process at most this many unfinished entries");
  add_client_flags(build, o);

  auto* calib = app.add_subcommand("calibrate-ood", "Calibrate the kNN OOD threshold on cache embeddings");
  calib->add_option("--cache", o.cache, "Cache directory");
  calib->add_option("--ood", o.ood, "Output directory (default: the cache directory)");
  calib->add_option("--k", o.ood_k, "Neighbour rank k");
  calib->add_option("--percentile", o.percentile, "Threshold percentile in (0, 100]");
  calib->add_option("--calibration-dataset", o.calibration_dataset, "Only use cache rows with this dataset tag");

  bool timings = false;
  auto* infer = app.add_subcommand("infer", "Phase-2: route and classify every query of a manifest");
  add_inference_flags(infer, o);
  add_client_flags(infer, o);
  infer->add_option("--results", o.results, "Output results JSONL; the summary goes next to it");
  infer->add_flag("--timings", timings, "Include per-stage latencies in the results");

  EvalFlags ef;
  auto* eval = app.add_subcommand("evaluate", "Per-dataset accuracy, macro F1, EER and routing counts");
  eval->add_option("--results", o.results, "Results JSONL from infer");
  eval->add_option("--manifest", o.manifest, "Ground-truth manifest");
  eval->add_option("--report", ef.report, "Report JSON path (default: next to the results)");
  eval->add_option("--compare", ef.compare, "Second results file for a paired t-test");
  eval->add_option("--histogram", ef.histogram, "Also write a detector score histogram CSV here");
  eval->add_option("--bins", ef.bins, "Histogram bins")->check(CLI::PositiveNumber);
  eval->add_flag("--logits", ef.use_logit, "Histogram raw logits instead of scores");

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "Evaluate a grid of strategies x retrieval modes x routing");
  add_inference_flags(ablate, o);
  add_client_flags(ablate, o);
  ablate->add_option("--strategies", af.strategies, "Strategies to try")->delimiter(',');
  ablate->add_option("--modes", af.modes, "Retrieval modes to try")->delimiter(',');
  ablate->add_option("--routings", af.routings, "Routing modes to try")->delimiter(',');
  ablate->add_option("--out", o.out, "Directory for ablation.json");

  EvalFlags hf;
  auto* hist = app.add_subcommand("export-hist", "Write the detector score distribution per class as CSV");
  hist->add_option("--results", o.results, "Results JSONL from infer");
  hist->add_option("--manifest", o.manifest, "Ground-truth manifest");
  hist->add_option("--bins", hf.bins, "Number of equal-width bins")->check(CLI::PositiveNumber);
  hist->add_option("--out", hf.histogram, "Output CSV");
  hist->add_flag("--logits", hf.use_logit, "Use raw logits instead of scores");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunConfig cfg = o.config ? load_run_config(*o.config) : RunConfig{};
    apply_overrides(o, cfg);
    if (print_config) {
      out << config_json(cfg) << "\n";
      return kOk;
    }
    if (*build) return cmd_build_cache(cfg, out, err);
    if (*calib) return cmd_calibrate_ood(cfg, out);
    if (*infer) return cmd_infer(cfg, timings, out, err);
    if (*eval) return cmd_evaluate(cfg, ef, out, err);
    if (*ablate) return cmd_ablate(cfg, af, out);
    if (*hist) return cmd_export_hist(cfg, hf, out);
    return kConfigError;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error [io-error]: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace iclad::cli
