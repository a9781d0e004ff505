#include "iclad/clients.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>
#include <openssl/evp.h>

namespace iclad {

namespace {

std::vector<const AudioRef*> attachments(const AlmRequest& req) {
  std::vector<const AudioRef*> out;
  for (const auto& p : req.parts) {
    if (p.kind == PromptPart::Kind::audio_attachment) out.push_back(&p.audio);
  }
  return out;
}

std::string evidence_json(const std::string& real_ev, const std::string& fake_ev) {
  nlohmann::ordered_json j;
  j["Real_Evidence"] = real_ev;
  j["Fake_Evidence"] = fake_ev;
  return j.dump();
}

}  // namespace

AlmRequest AlmRequest::from_prompt(Prompt prompt) {
  AlmRequest req;
  req.parts = std::move(prompt.parts);
  req.template_id = std::move(prompt.template_id);
  return req;
}

void AlmRequest::validate() const {
  if (parts.empty()) throw Error(ErrorCode::invalid_argument, "ALM request has no parts");
  if (max_output_tokens <= 0) {
    throw Error(ErrorCode::invalid_argument, "max_output_tokens must be positive");
  }
  if (temperature < 0.0) throw Error(ErrorCode::invalid_argument, "temperature must be >= 0");
  for (const auto& p : parts) {
    if (p.kind == PromptPart::Kind::audio_attachment) return;
  }
  throw Error(ErrorCode::invalid_argument, "detection request carries no audio attachment");
}

std::string serialize_request(const AlmRequest& req) {
  nlohmann::ordered_json j;
  j["template_id"] = req.template_id;
  j["generation"] = {{"max_tokens", req.max_output_tokens}, {"temperature", req.temperature}};
  auto& parts = j["parts"] = nlohmann::ordered_json::array();
  for (const auto& p : req.parts) {
    if (p.kind == PromptPart::Kind::text) {
      parts.push_back({{"text", p.text}});
    } else {
      parts.push_back({{"audio", {{"id", p.audio.id},
                                  {"path", p.audio.path.string()},
                                  {"dataset", p.audio.dataset}}}});
    }
  }
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::io, "SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string request_fingerprint(const AlmRequest& req) {
  return sha256_hex(serialize_request(req));
}

std::vector<DetectorResult> DetectorClient::score_batch(std::span<const AudioRef> audio) {
  std::vector<DetectorResult> out;
  out.reserve(audio.size());
  for (const auto& a : audio) out.push_back(score(a));
  return out;
}

ConcurrencyGate::ConcurrencyGate(std::ptrdiff_t limit) : slots_(limit) {
  if (limit <= 0 || limit > 1024) {
    throw Error(ErrorCode::invalid_argument, "concurrency limit must lie in [1, 1024]");
  }
}

ScriptedAlm ScriptedAlm::constant(std::string reply) {
  return ScriptedAlm([reply = std::move(reply)](const AlmRequest&) { return reply; });
}

std::string ScriptedAlm::complete(const AlmRequest& req) {
  ++calls_;
  return script_(req);
}

std::string majority_mock_alm(const AlmRequest& req,
                              const std::unordered_map<std::string, Label>& hidden_labels) {
  auto audio = attachments(req);
  if (audio.empty()) {
    throw Error(ErrorCode::not_icl_shaped, "request has no query attachment");
  }
  std::size_t n_real = 0, n_fake = 0;
  for (std::size_t i = 0; i + 1 < audio.size(); ++i) {
    auto it = hidden_labels.find(audio[i]->id);
    if (it == hidden_labels.end()) {
      throw Error(ErrorCode::not_icl_shaped,
                  "in-context example '" + audio[i]->id + "' has no known label");
    }
    (it->second == Label::real ? n_real : n_fake) += 1;
  }
  const Label answer = n_fake > n_real ? Label::fake : Label::real;
  const auto n = std::to_string(n_real + n_fake);

  nlohmann::ordered_json j;
  j["Real_Evidence"] = std::to_string(n_real) + " of " + n + " retrieved examples are labeled real";
  j["Fake_Evidence"] = std::to_string(n_fake) + " of " + n + " retrieved examples are labeled fake";
  j["Reconciled_Evidence"] = "the nearest examples are mostly " + std::string(to_string(answer));
  j["Final_Answer"] = to_string(answer);
  return j.dump();
}

std::string MockAlm::complete(const AlmRequest& req) {
  ++calls_;
  auto audio = attachments(req);
  if (audio.empty()) throw Error(ErrorCode::not_icl_shaped, "request has no audio");
  const auto& subject = audio.back()->id;
  if (failing_ids_.contains(subject)) {
    throw Error(ErrorCode::transport, "mock ALM: permanent failure for '" + subject + "'");
  }
  if (req.template_id.rfind("phase1_initial@", 0) == 0) {
    return evidence_json(subject + ": steady breathing and natural pauses between phrases",
                         subject + ": slightly metallic timbre on sustained vowels");
  }
  if (req.template_id.rfind("phase1_reconcile@", 0) == 0) {
    nlohmann::ordered_json j;
    j["Reconciled_Evidence"] =
        subject + ": breathing and pause placement are the reliable cues; the timbre remark "
                  "is not clearly audible and is discounted";
    return j.dump();
  }
  return majority_mock_alm(req, hidden_labels_);
}

std::unordered_map<std::string, DetectorResult> TableDetector::load_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open detector table " + path.string());
  std::unordered_map<std::string, DetectorResult> table;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      DetectorResult r;
      r.score = j.at("score").get<double>();
      if (j.contains("raw_logit")) r.raw_logit = j["raw_logit"].get<double>();
      r.embedding = j.at("embedding").get<std::vector<float>>();
      if (!(r.score >= 0.0 && r.score <= 1.0)) {
        throw Error(ErrorCode::malformed, "score outside [0, 1]");
      }
      table[j.at("id").get<std::string>()] = std::move(r);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed,
                  path.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::malformed,
                  path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return table;
}

void save_detector_table(const std::filesystem::path& path,
                         const std::unordered_map<std::string, DetectorResult>& table) {
  // Sorted by id so the file is reproducible.
  std::map<std::string, const DetectorResult*> sorted;
  for (const auto& [id, r] : table) sorted.emplace(id, &r);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write detector table " + path.string());
  for (const auto& [id, r] : sorted) {
    nlohmann::ordered_json j = {{"id", id}, {"score", r->score}};
    if (r->raw_logit) j["raw_logit"] = *r->raw_logit;
    j["embedding"] = r->embedding;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failure on " + path.string());
}

DetectorResult TableDetector::score(const AudioRef& audio) {
  ++calls_;
  auto it = table_.find(audio.id);
  if (it == table_.end()) {
    throw Error(ErrorCode::unreadable_audio, "detector has no result for '" + audio.id + "'");
  }
  return it->second;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

EmbeddingMatrix HashTextEmbedder::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::empty_input, "no texts to embed");
  std::vector<float> data;
  data.reserve(texts.size() * dim_);
  for (const auto& text : texts) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    if (tokens.empty()) tokens.emplace_back();

    std::vector<double> acc(dim_, 0.0);
    for (const auto& tok : tokens) {
      const auto seed = fnv1a64(tok);
      for (std::size_t j = 0; j < dim_; ++j) {
        // Top 53 bits -> [0, 1) -> [-1, 1).
        const double u = static_cast<double>(splitmix64(seed + j) >> 11) * 0x1.0p-53;
        acc[j] += 2.0 * u - 1.0;
      }
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    for (double v : acc) data.push_back(static_cast<float>(v / norm));
  }
  return EmbeddingMatrix(dim_, texts.size(), std::move(data));
}

}  // namespace iclad
