#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "iclad/error.hpp"
#include "iclad/ood.hpp"
#include "iclad/prompting.hpp"
#include "iclad/router.hpp"
#include "iclad/search.hpp"

namespace iclad::cli {

/// Environment variables holding credentials. Never accepted as flags.
inline constexpr const char* kAlmKeyEnv = "ICLAD_ALM_API_KEY";
inline constexpr const char* kSidecarTokenEnv = "ICLAD_SIDECAR_TOKEN";

enum ExitCode : int { kOk = 0, kConfigError = 2, kClientError = 3, kDataError = 4 };

int exit_code_for(ErrorCode code);

/// Everything a run needs. TOML keys use the same names, grouped into
/// [paths], [ood], [retrieval], [alm], [detector], [text_embedder] and
/// [build] tables; relative paths in a config file resolve against the
/// file's directory.
struct RunConfig {
  struct Paths {
    std::filesystem::path cache;
    std::filesystem::path ood;  // defaults to the cache directory
    std::filesystem::path manifest;
    std::filesystem::path results;
    std::filesystem::path replay_log;
    std::filesystem::path templates;
    std::filesystem::path out;
    std::vector<std::filesystem::path> pool;
  } paths;

  OodConfig ood;
  /// Calibrate only on cache rows of this dataset tag; empty = all rows.
  std::string calibration_dataset;
  RetrievalConfig retrieval;
  Strategy strategy = Strategy::pcr;
  RoutingMode routing = RoutingMode::auto_route;

  struct Alm {
    std::string client = "http";  // http | mock | replay
    bool record = false;          // append every live response to paths.replay_log
    std::string url;
    std::string path = "/v1/complete";
    int timeout_s = 120;
    int max_in_flight = 4;
    int max_output_tokens = 1024;
  } alm;

  struct Detector {
    std::string client = "sidecar";  // sidecar | table
    std::string url;
    std::filesystem::path table;
    std::string model_tag = "detector-embedding";
  } detector;

  struct TextEmbedderCfg {
    std::string client = "hash";  // hash | sidecar
    std::string url;
    std::size_t dim = 64;
    std::string model_tag = "text-embedding";
  } text_embedder;

  struct Build {
    std::size_t n_each = 0;  // 0: use the pool manifests as they are
    int max_attempts = 3;
    std::optional<std::size_t> stop_after;
  } build;

  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::string_view toml_text, const std::filesystem::path& base_dir);
/// Effective configuration as JSON (no secrets).
std::string config_json(const RunConfig& cfg);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iclad::cli
