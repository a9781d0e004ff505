#include "iclad/http_clients.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

namespace iclad {

namespace {

httplib::Client make_client(const HttpEndpoint& ep) {
  httplib::Client cli(ep.base_url);
  cli.set_connection_timeout(ep.timeout);
  cli.set_read_timeout(ep.timeout);
  cli.set_write_timeout(ep.timeout);
  if (!ep.bearer_token.empty()) cli.set_bearer_token_auth(ep.bearer_token);
  return cli;
}

// Maps a transport outcome onto the error taxonomy; returns the body on 200.
std::string check_response(const httplib::Result& res, const std::string& what) {
  if (!res) {
    throw Error(ErrorCode::transport, what + ": " + httplib::to_string(res.error()),
                /*transient=*/true);
  }
  const int status = res->status;
  if (status == 200) return res->body;
  const auto msg = what + ": HTTP " + std::to_string(status);
  if (status == 401 || status == 403) throw Error(ErrorCode::authentication, msg);
  if (status == 413) throw Error(ErrorCode::attachment_too_large, msg);
  const bool transient = status == 408 || status == 429 || status >= 500;
  throw Error(ErrorCode::transport, msg, transient);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::unreadable_audio, "cannot read audio " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json parse_body(const std::string& body, const std::string& what) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::transport, what + ": response is not JSON");
  return j;
}

std::vector<std::vector<float>> parse_vectors(const nlohmann::json& j, const std::string& what) {
  try {
    const auto dim = j.at("dim").get<std::size_t>();
    auto vectors = j.at("vectors").get<std::vector<std::vector<float>>>();
    for (const auto& v : vectors) {
      if (v.size() != dim) throw Error(ErrorCode::dim_mismatch, what + ": vector length != dim");
    }
    return vectors;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::transport, what + ": malformed embed response: " + e.what());
  }
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string mime_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".wav") return "audio/wav";
  if (ext == ".flac") return "audio/flac";
  if (ext == ".mp3") return "audio/mpeg";
  if (ext == ".ogg" || ext == ".opus") return "audio/ogg";
  if (ext == ".m4a") return "audio/mp4";
  return "application/octet-stream";
}

HttpAlm::HttpAlm(Options options)
    : options_(std::move(options)), gate_(options_.max_in_flight) {}

std::string HttpAlm::build_body(const AlmRequest& req) const {
  nlohmann::json body;
  auto& parts = body["parts"] = nlohmann::json::array();
  for (const auto& p : req.parts) {
    if (p.kind == PromptPart::Kind::text) {
      parts.push_back({{"text", p.text}});
      continue;
    }
    auto bytes = read_file(p.audio.path);
    if (bytes.size() > options_.max_attachment_bytes) {
      throw Error(ErrorCode::attachment_too_large,
                  "attachment '" + p.audio.id + "' is " + std::to_string(bytes.size()) +
                      " bytes, limit " + std::to_string(options_.max_attachment_bytes));
    }
    parts.push_back({{"audio_b64", base64_encode(bytes)}, {"mime", mime_for(p.audio.path)}});
  }
  body["generation"] = {{"max_tokens", req.max_output_tokens}, {"temperature", req.temperature}};
  return body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string HttpAlm::complete(const AlmRequest& req) {
  req.validate();
  const auto body = build_body(req);
  auto permit = gate_.enter();
  return with_retry(options_.retry, [&] {
    auto cli = make_client(options_.endpoint);
    auto res = cli.Post(options_.endpoint.path, body, "application/json");
    auto j = parse_body(check_response(res, "ALM"), "ALM");
    if (!j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorCode::transport, "ALM response lacks a \"text\" field");
    }
    return j["text"].get<std::string>();
  });
}

SidecarDetector::SidecarDetector(Options options)
    : options_(std::move(options)), gate_(options_.max_in_flight) {}

DetectorResult SidecarDetector::score(const AudioRef& audio) {
  nlohmann::json req = {{"path", audio.path.string()}, {"model_tag", options_.model_tag}};
  const auto body = req.dump();
  auto permit = gate_.enter();
  return with_retry(options_.retry, [&] {
    auto cli = make_client(options_.endpoint);
    auto res = cli.Post("/embed", body, "application/json");
    if (res && res->status == 400) {
      throw Error(ErrorCode::unreadable_audio, "sidecar cannot decode '" + audio.id + "'");
    }
    if (res && res->status == 404) {
      throw Error(ErrorCode::config, "sidecar has no model '" + options_.model_tag + "'");
    }
    auto j = parse_body(check_response(res, "sidecar /embed"), "sidecar /embed");
    auto vectors = parse_vectors(j, "sidecar /embed");
    if (vectors.size() != 1) throw Error(ErrorCode::transport, "sidecar /embed: expected one vector");
    if (!j.contains("score") || !j["score"].is_number()) {
      throw Error(ErrorCode::transport, "sidecar /embed: detector response lacks a score");
    }
    DetectorResult r;
    r.score = j["score"].get<double>();
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      throw Error(ErrorCode::transport, "sidecar /embed: score outside [0, 1]");
    }
    if (j.contains("raw_logit") && j["raw_logit"].is_number()) r.raw_logit = j["raw_logit"].get<double>();
    r.embedding = std::move(vectors.front());
    return r;
  });
}

EmbeddingMatrix SidecarTextEmbedder::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::empty_input, "no texts to embed");
  nlohmann::json req = {{"texts", std::vector<std::string>(texts.begin(), texts.end())},
                        {"model_tag", options_.model_tag}};
  const auto body = req.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  return with_retry(options_.retry, [&] {
    auto cli = make_client(options_.endpoint);
    auto res = cli.Post("/embed_text", body, "application/json");
    auto j = parse_body(check_response(res, "sidecar /embed_text"), "sidecar /embed_text");
    auto vectors = parse_vectors(j, "sidecar /embed_text");
    if (vectors.size() != texts.size()) {
      throw Error(ErrorCode::transport, "sidecar /embed_text: row count differs from input");
    }
    return EmbeddingMatrix::from_rows(vectors);
  });
}

std::vector<SidecarModel> sidecar_health(const HttpEndpoint& endpoint) {
  auto cli = make_client(endpoint);
  auto j = parse_body(check_response(cli.Get("/health"), "sidecar /health"), "sidecar /health");
  std::vector<SidecarModel> out;
  try {
    for (const auto& m : j.at("models")) {
      out.push_back({m.at("model_tag").get<std::string>(), m.at("dim").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::transport, std::string("sidecar /health: ") + e.what());
  }
  return out;
}

}  // namespace iclad
