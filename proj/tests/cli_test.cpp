#include <gtest/gtest.h>

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <thread>

#include "cli.hpp"
#include "iclad/cache_store.hpp"
#include "test_support.hpp"

namespace iclad {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::read_bytes;
using testing::TempDir;
using testing::TwoClusterWorld;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"iclad"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void save_table(const fs::path& path, const std::unordered_map<std::string, DetectorResult>& table) {
  std::ofstream out(path);
  for (const auto& [id, r] : table) {
    json j = {{"id", id}, {"score", r.score}, {"embedding", r.embedding}};
    if (r.raw_logit) j["raw_logit"] = *r.raw_logit;
    out << j.dump() << "\n";
  }
}

// A small on-disk world: a pool of 10 real + 10 fake clips near two clusters,
// in-distribution queries and far-away queries, one detector table for all.
struct Workspace {
  TempDir dir;
  TwoClusterWorld world{16, 5};
  fs::path pool = dir / "pool.jsonl";
  fs::path table = dir / "detector.jsonl";
  fs::path cache = dir / "cache";
  fs::path id_queries = dir / "id_queries.jsonl";
  fs::path far_queries = dir / "far_queries.jsonl";
  std::string templates = ICLAD_TEMPLATE_DIR;

  Workspace() {
    std::unordered_map<std::string, DetectorResult> det;
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 20; ++i) {
      ManifestEntry m;
      m.audio.id = "pool_" + std::to_string(i);
      m.audio.path = dir / (m.audio.id + ".wav");
      testing::write_bytes(m.audio.path, "RIFF" + m.audio.id);
      m.audio.dataset = "anchor";
      m.audio.split = Split::train;
      m.label = i % 2 ? Label::fake : Label::real;
      det[m.audio.id] = {m.label == Label::fake ? 0.9 : 0.1, m.label == Label::fake ? 2.0 : -2.0,
                         world.sample(m.label)};
      entries.push_back(std::move(m));
    }
    save_manifest(pool, DatasetManifest("pool", std::move(entries)));

    auto id = world.make_queries(20, "idq_", 0.5);
    auto far = world.make_outliers(20, "far_");
    det.insert(id.detector.begin(), id.detector.end());
    det.insert(far.detector.begin(), far.detector.end());
    save_manifest(id_queries, id.manifest);
    save_manifest(far_queries, far.manifest);
    save_table(table, det);
  }

  std::vector<std::string> clients(const std::string& alm = "mock") const {
    return {"--alm-client", alm, "--detector-client", "table", "--detector-table", table.string(),
            "--templates", templates};
  }

  Run build() {
    auto args = clients();
    std::vector<std::string> all{"build-cache", "--pool", pool.string(), "--cache", cache.string()};
    all.insert(all.end(), args.begin(), args.end());
    return run_vec(all);
  }

  Run calibrate() {
    return run_vec({"calibrate-ood", "--cache", cache.string(), "--k", "3", "--percentile", "95"});
  }

  Run infer(const fs::path& manifest, const fs::path& results, std::vector<std::string> extra = {},
            const std::string& alm = "mock") {
    std::vector<std::string> all{"infer", "--cache", cache.string(), "--manifest", manifest.string(),
                                 "--results", results.string()};
    auto args = clients(alm);
    all.insert(all.end(), args.begin(), args.end());
    all.insert(all.end(), extra.begin(), extra.end());
    return run_vec(all);
  }

  static Run run_vec(const std::vector<std::string>& args) {
    std::vector<std::string> owned{"iclad"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : owned) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  void prepare() {
    auto b = build();
    ASSERT_EQ(b.code, 0) << b.err;
    auto c = calibrate();
    ASSERT_EQ(c.code, 0) << c.err;
  }
};

// ---- build-cache ----------------------------------------------------------------------------

TEST(CliBuild, HappyPathWritesThreeFiles) {
  Workspace w;
  auto r = w.build();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(w.cache / kCacheEmbeddingsFile));
  EXPECT_TRUE(fs::exists(w.cache / kCacheMetadataFile));
  EXPECT_TRUE(fs::exists(w.cache / "job_state.json"));
  EXPECT_NE(r.out.find("reconciled: 20"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("cache rows: 20"), std::string::npos);
  EXPECT_EQ(read_cache(w.cache).size(), 20u);
}

TEST(CliBuild, MissingPoolNamesThePath) {
  Workspace w;
  const auto missing = (w.dir / "nope.jsonl").string();
  auto r = Workspace::run_vec({"build-cache", "--pool", missing, "--cache", w.cache.string(),
                               "--alm-client", "mock", "--detector-client", "table",
                               "--detector-table", w.table.string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(w.cache / kCacheMetadataFile));
}

TEST(CliBuild, RerunIsNoOp) {
  Workspace w;
  ASSERT_EQ(w.build().code, 0);
  const auto emb = read_bytes(w.cache / kCacheEmbeddingsFile);
  const auto meta = read_bytes(w.cache / kCacheMetadataFile);
  auto again = w.build();
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_NE(again.out.find("0 pending"), std::string::npos) << again.out;
  EXPECT_EQ(read_bytes(w.cache / kCacheEmbeddingsFile), emb);
  EXPECT_EQ(read_bytes(w.cache / kCacheMetadataFile), meta);
}

// ---- infer ------------------------------------------------------------------------------------

TEST(CliInfer, InDistributionQueriesNeverReachTheAlm) {
  Workspace w;
  w.prepare();
  const auto results = w.dir / "out" / "id.jsonl";
  auto r = w.infer(w.id_queries, results);
  ASSERT_EQ(r.code, 0) << r.err;
  auto summary = json::parse(r.out);
  EXPECT_EQ(summary["n"], 20);
  EXPECT_EQ(summary["alm_calls"], 0);
  EXPECT_TRUE(fs::exists(w.dir / "out" / "id.summary.json"));
}

TEST(CliInfer, FarQueriesGoToTheAlm) {
  Workspace w;
  w.prepare();
  auto r = w.infer(w.far_queries, w.dir / "far.jsonl");
  ASSERT_EQ(r.code, 0) << r.err;
  auto summary = json::parse(r.out);
  EXPECT_EQ(summary["n_alm"], 20);
  EXPECT_EQ(summary["alm_calls"], 20);
}

std::vector<std::string> fingerprints(const fs::path& results) {
  std::vector<std::string> out;
  for (const auto& rec : load_results(results)) out.push_back(rec.prompt_fingerprint);
  return out;
}

TEST(CliInfer, StrategiesProduceDifferentPrompts) {
  Workspace w;
  w.prepare();
  ASSERT_EQ(w.infer(w.far_queries, w.dir / "pcr.jsonl", {"--strategy", "pcr"}).code, 0);
  ASSERT_EQ(w.infer(w.far_queries, w.dir / "simple.jsonl", {"--strategy", "simple"}).code, 0);
  auto a = fingerprints(w.dir / "pcr.jsonl");
  auto b = fingerprints(w.dir / "simple.jsonl");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_FALSE(a[i].empty());
    EXPECT_NE(a[i], b[i]);
  }
}

TEST(CliInfer, RecordThenReplayIsByteIdentical) {
  Workspace w;
  w.prepare();
  const auto log = (w.dir / "replay.jsonl").string();
  auto live = w.infer(w.far_queries, w.dir / "live.jsonl", {"--record", "--replay-log", log});
  ASSERT_EQ(live.code, 0) << live.err;
  auto replay = w.infer(w.far_queries, w.dir / "replayed.jsonl", {"--replay-log", log}, "replay");
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(read_bytes(w.dir / "live.jsonl"), read_bytes(w.dir / "replayed.jsonl"));
  EXPECT_EQ(live.out, replay.out);
}

TEST(CliInfer, ReplayMissIsRecordedPerQuery) {
  Workspace w;
  w.prepare();
  const auto log = w.dir / "empty_log.jsonl";
  std::ofstream(log).close();
  auto r = w.infer(w.far_queries, w.dir / "miss.jsonl", {"--replay-log", log.string()}, "replay");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["errors"], 20);
  EXPECT_NE(r.err.find("20 queries failed"), std::string::npos);
}

TEST(CliInfer, MmrModeUsesTheTextEmbedder) {
  Workspace w;
  w.prepare();
  auto r = w.infer(w.far_queries, w.dir / "mmr.jsonl", {"--retrieval-mode", "mmr", "--mmr-lambda", "0.7"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["alm_calls"], 20);
}

// ---- evaluate / export ---------------------------------------------------------------------------

TEST(CliEvaluate, PerfectDetectorScoresOne) {
  Workspace w;
  w.prepare();
  const auto results = w.dir / "id.jsonl";
  ASSERT_EQ(w.infer(w.id_queries, results).code, 0);
  auto r = Workspace::run_vec({"evaluate", "--results", results.string(), "--manifest", w.id_queries.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = json::parse(read_bytes(w.dir / "id.report.json"));
  const auto& overall = report["reports"].back();
  EXPECT_EQ(overall["dataset"], "overall");
  EXPECT_DOUBLE_EQ(overall["accuracy"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(overall["macro_f1"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(overall["eer"].get<double>(), 0.0);
  EXPECT_NE(r.out.find("1.0000"), std::string::npos);
}

TEST(CliEvaluate, CompareIdenticalWarnsButReports) {
  Workspace w;
  w.prepare();
  const auto results = w.dir / "far.jsonl";
  ASSERT_EQ(w.infer(w.far_queries, results).code, 0);
  auto r = Workspace::run_vec({"evaluate", "--results", results.string(), "--manifest",
                               w.far_queries.string(), "--compare", results.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_NE(r.err.find("zero variance"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("overall"), std::string::npos);
}

TEST(CliEvaluate, HistogramFlagWritesCsv) {
  Workspace w;
  w.prepare();
  const auto results = w.dir / "id.jsonl";
  ASSERT_EQ(w.infer(w.id_queries, results).code, 0);
  const auto csv = w.dir / "hist.csv";
  auto r = Workspace::run_vec({"evaluate", "--results", results.string(), "--manifest",
                               w.id_queries.string(), "--histogram", csv.string(), "--bins", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(read_bytes(csv));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bin_left,bin_right,count_real,count_fake");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);

  const auto csv2 = w.dir / "hist2.csv";
  auto e = Workspace::run_vec({"export-hist", "--results", results.string(), "--manifest",
                               w.id_queries.string(), "--out", csv2.string(), "--bins", "4"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(read_bytes(csv), read_bytes(csv2));
}

TEST(CliAblate, ForcedRoutesGrid) {
  Workspace w;
  w.prepare();
  auto args = w.clients();
  std::vector<std::string> all{"ablate", "--cache", w.cache.string(), "--manifest", w.id_queries.string(),
                               "--strategies", "pcr,zero_shot", "--routings", "detector,alm",
                               "--out", (w.dir / "abl").string()};
  all.insert(all.end(), args.begin(), args.end());
  auto r = Workspace::run_vec(all);
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(read_bytes(w.dir / "abl" / "ablation.json"));
  ASSERT_EQ(j.size(), 4u) << j.dump(2);
  for (const auto& cell : j) EXPECT_FALSE(cell.contains("error")) << cell.dump();
  EXPECT_EQ(j[0]["cell"], "pcr/cosine_topk/detector");
  EXPECT_EQ(j[0]["report"]["routing"]["n_detector"], 20);
  EXPECT_EQ(j[1]["report"]["routing"]["n_alm"], 20);
}

// ---- configuration -------------------------------------------------------------------------------

json print_config(std::initializer_list<std::string> args) {
  auto r = run(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return json::parse(r.out);
}

TEST(CliConfig, DefaultsFileAndFlagPrecedence) {
  TempDir dir;
  testing::write_bytes(dir / "run.toml",
                       "strategy = \"simple\"\n"
                       "jobs = 3\n"
                       "[paths]\ncache = \"c\"\n"
                       "[retrieval]\nk_total = 8\nper_class = 4\nmode = \"mmr\"\n"
                       "[alm]\nclient = \"mock\"\n");
  const auto cfg = (dir / "run.toml").string();

  auto defaults = print_config({"--print-config", "infer"});
  EXPECT_EQ(defaults["strategy"], "pcr");
  EXPECT_EQ(defaults["jobs"], 1);
  EXPECT_EQ(defaults["retrieval"]["k_total"], 10);
  EXPECT_EQ(defaults["retrieval"]["per_class"], 5);
  EXPECT_EQ(defaults["alm"]["client"], "http");
  EXPECT_EQ(defaults["ood"]["k"], 5);
  EXPECT_DOUBLE_EQ(defaults["ood"]["percentile"].get<double>(), 95.0);

  auto file = print_config({"--config", cfg, "--print-config", "infer"});
  EXPECT_EQ(file["strategy"], "simple");
  EXPECT_EQ(file["jobs"], 3);
  EXPECT_EQ(file["retrieval"]["mode"], "mmr");
  EXPECT_EQ(file["alm"]["client"], "mock");
  // Relative paths resolve against the config file's directory.
  EXPECT_EQ(file["paths"]["cache"], (dir / "c").string());

  auto flags = print_config({"--config", cfg, "--jobs", "7", "--print-config", "infer", "--strategy",
                             "pcr", "--k-total", "6", "--per-class", "3", "--cache", "/abs/c"});
  EXPECT_EQ(flags["strategy"], "pcr");
  EXPECT_EQ(flags["jobs"], 7);
  EXPECT_EQ(flags["retrieval"]["k_total"], 6);
  EXPECT_EQ(flags["retrieval"]["per_class"], 3);
  EXPECT_EQ(flags["retrieval"]["mode"], "mmr");  // untouched by flags
  EXPECT_EQ(flags["paths"]["cache"], "/abs/c");
}

TEST(CliConfig, RejectsUnknownKeysAndBadValues) {
  TempDir dir;
  testing::write_bytes(dir / "typo.toml", "[retrieval]\nk_totl = 8\n");
  auto r = run({"--config", (dir / "typo.toml").string(), "--print-config", "infer"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("retrieval.k_totl"), std::string::npos);

  testing::write_bytes(dir / "bad.toml", "strategy = \"chain_of_thought\"\n");
  EXPECT_EQ(run({"--config", (dir / "bad.toml").string(), "--print-config", "infer"}).code, cli::kConfigError);

  testing::write_bytes(dir / "broken.toml", "[retrieval\n");
  EXPECT_EQ(run({"--config", (dir / "broken.toml").string(), "--print-config", "infer"}).code,
            cli::kConfigError);
  EXPECT_EQ(run({"--config", (dir / "absent.toml").string(), "--print-config", "infer"}).code,
            cli::kConfigError);
}

// ---- help and exit codes -------------------------------------------------------------------------

TEST(CliHelp, ListsSubcommands) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"build-cache", "calibrate-ood", "infer", "evaluate", "ablate", "export-hist"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
  auto sub = run({"infer", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--retrieval-mode"), std::string::npos);
}

TEST(CliExitCodes, Mapping) {
  EXPECT_EQ(cli::exit_code_for(ErrorCode::config), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::invalid_argument), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::k_too_large), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::transport), cli::kClientError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::authentication), cli::kClientError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::replay_miss), cli::kClientError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::malformed), cli::kDataError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::duplicate_id), cli::kDataError);
  EXPECT_EQ(cli::exit_code_for(ErrorCode::io), cli::kDataError);
}

TEST(CliExitCodes, EndToEnd) {
  EXPECT_EQ(run({}).code, cli::kConfigError);
  EXPECT_EQ(run({"infer", "--no-such-flag"}).code, cli::kConfigError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kConfigError);

  Workspace w;
  w.prepare();
  // A manifest with a duplicate id is a data error.
  const auto dup = w.dir / "dup.jsonl";
  const auto line = read_bytes(w.id_queries).substr(0, read_bytes(w.id_queries).find('\n') + 1);
  testing::write_bytes(dup, line + line);
  EXPECT_EQ(w.infer(dup, w.dir / "dup_out.jsonl").code, cli::kDataError);
  // A cache too small for the requested k is a data error.
  auto big_k = Workspace::run_vec({"calibrate-ood", "--cache", w.cache.string(), "--k", "500"});
  EXPECT_EQ(big_k.code, cli::kDataError) << big_k.err;
  EXPECT_NE(big_k.err.find("too-few-calibration-rows"), std::string::npos);
  // An unreachable ALM on far queries is recorded per query, not fatal.
  auto r = w.infer(w.far_queries, w.dir / "down.jsonl",
                   {"--alm-url", "http://127.0.0.1:1", "--alm-timeout", "1"}, "http");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["errors"], 20);
}

// ---- secrets -------------------------------------------------------------------------------------

TEST(CliSecrets, NotAcceptedAsFlagsOrConfig) {
  for (const char* flag : {"--api-key", "--alm-api-key", "--token", "--sidecar-token"}) {
    auto r = run({"infer", flag, "s3cret"});
    EXPECT_EQ(r.code, cli::kConfigError) << flag;
  }
  TempDir dir;
  testing::write_bytes(dir / "k.toml", "[alm]\napi_key = \"s3cret\"\n");
  auto r = run({"--config", (dir / "k.toml").string(), "--print-config", "infer"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_EQ(r.out.find("s3cret"), std::string::npos);
}

TEST(CliSecrets, KeyComesFromEnvironmentAndIsNeverPrinted) {
  Workspace w;
  w.prepare();

  httplib::Server server;
  std::mutex mu;
  std::vector<std::string> auth_headers;
  server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      auth_headers.push_back(req.get_header_value("Authorization"));
    }
    res.set_content(json{{"text", "{\"Real_Evidence\":\"a\",\"Fake_Evidence\":\"b\","
                                  "\"Reconciled_Evidence\":\"c\",\"Final_Answer\":\"fake\"}"}}
                        .dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  // The HTTP client uploads every clip, exemplars included, so they must exist.
  std::vector<ManifestEntry> entries = load_manifest(w.far_queries).entries();
  for (auto& e : entries) {
    e.audio.path = w.dir / (e.audio.id + ".wav");
    testing::write_bytes(e.audio.path, "RIFF" + e.audio.id);
  }
  const auto manifest = w.dir / "far_local.jsonl";
  save_manifest(manifest, DatasetManifest("far", entries));

  ::setenv(cli::kAlmKeyEnv, "env-secret-123", 1);
  auto r = w.infer(manifest, w.dir / "http.jsonl",
                   {"--alm-url", "http://127.0.0.1:" + std::to_string(port)}, "http");
  auto cfg = run({"--print-config", "infer"});
  ::unsetenv(cli::kAlmKeyEnv);
  server.stop();
  t.join();

  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["alm_calls"], 20);
  EXPECT_EQ(json::parse(r.out)["errors"], 0);
  ASSERT_EQ(auth_headers.size(), 20u) << r.out;
  for (const auto& h : auth_headers) EXPECT_EQ(h, "Bearer env-secret-123");
  for (const auto* text : {&r.out, &r.err, &cfg.out}) {
    EXPECT_EQ(text->find("env-secret-123"), std::string::npos);
  }
  EXPECT_EQ(read_bytes(w.dir / "http.jsonl").find("env-secret-123"), std::string::npos);
}

}  // namespace
}  // namespace iclad
