#include "confroute/confidence.hpp"

#include <fstream>
#include <numeric>
#include <regex>

#include <json.hpp>

#include "confroute/core.hpp"

namespace confroute::confidence {

std::string to_string(Method method) {
  switch (method) {
    case Method::self_ref: return "self_ref";
    case Method::verbalized: return "verbalized";
    case Method::yes_no: return "yes_no";
    case Method::logits_zero_shot: return "logits_zero_shot";
    case Method::logits_finetuned: return "logits_finetuned";
  }
  throw std::logic_error("unknown confidence method");
}

Method method_from_string(const std::string& name) {
  if (name == "self_ref") return Method::self_ref;
  if (name == "verbalized") return Method::verbalized;
  if (name == "yes_no") return Method::yes_no;
  if (name == "logits_zero_shot") return Method::logits_zero_shot;
  if (name == "logits_finetuned") return Method::logits_finetuned;
  throw std::invalid_argument("unknown confidence method: " + name);
}

namespace {

double normalized_ratio(double favored, double other, const char* what) {
  if (!(favored >= 0.0) || !(other >= 0.0)) {
    throw std::invalid_argument(std::string(what) + ": probabilities must be nonnegative");
  }
  const double sum = favored + other;
  if (sum == 0.0) {
    throw ZeroSumError(std::string(what) + ": both token probabilities are zero");
  }
  return favored / sum;
}

}  // namespace

ConfidenceScore self_ref_score(double p_un, double p_cn) {
  return {normalized_ratio(p_cn, p_un, "self_ref_score"), Method::self_ref};
}

ConfidenceScore yes_no_score(double p_yes, double p_no) {
  return {normalized_ratio(p_yes, p_no, "yes_no_score"), Method::yes_no};
}

ConfidenceScore logits_score(std::span<const double> token_probs, LogitsKind kind,
                             Method method) {
  if (method != Method::logits_zero_shot && method != Method::logits_finetuned) {
    throw std::invalid_argument("logits_score: method must be a logits variant");
  }
  if (token_probs.empty()) {
    throw std::invalid_argument("logits_score: token_probs is empty");
  }
  for (double p : token_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("logits_score: probability outside [0,1]");
    }
  }
  if (kind == LogitsKind::single_token) {
    if (token_probs.size() != 1) {
      throw std::invalid_argument(
          "logits_score: single_token requires exactly one probability");
    }
    return {token_probs[0], method};
  }
  const double sum = std::accumulate(token_probs.begin(), token_probs.end(), 0.0);
  return {sum / static_cast<double>(token_probs.size()), method};
}

std::vector<ScoredQuery> load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<ScoredQuery> scores;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      ScoredQuery scored;
      scored.query_id = obj.at("query_id").get<std::string>();
      scored.score.value = obj.at("value").get<double>();
      scored.score.method = method_from_string(obj.at("method").get<std::string>());
      if (!(scored.score.value >= 0.0 && scored.score.value <= 1.0)) {
        throw SchemaError(line_no, "score value outside [0,1]");
      }
      scores.push_back(std::move(scored));
    } catch (const nlohmann::json::exception& err) {
      throw SchemaError(line_no, std::string("bad score record: ") + err.what());
    }
  }
  return scores;
}

void save_scores(std::span<const ScoredQuery> scores, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (const auto& scored : scores) {
    nlohmann::ordered_json obj;
    obj["query_id"] = scored.query_id;
    obj["value"] = scored.score.value;
    obj["method"] = to_string(scored.score.method);
    out << obj.dump() << '\n';
  }
}

VerbalizedAnswer parse_verbalized(const std::string& text) {
  static const std::regex pattern(
      R"(##Answer:\s*([\s\S]*?)\s*##Confidence:\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?))");
  auto begin = std::sregex_iterator(text.begin(), text.end(), pattern);
  auto end = std::sregex_iterator();
  if (begin == end) {
    throw ParseError("parse_verbalized: no ##Answer/##Confidence pattern found");
  }
  // Chain-of-thought outputs can mention the format early; the final
  // occurrence is the answer.
  std::smatch last;
  for (auto it = begin; it != end; ++it) {
    last = *it;
  }
  VerbalizedAnswer parsed;
  parsed.answer = trim(last[1].str());
  parsed.confidence = std::stod(last[2].str());
  if (parsed.confidence < 0.0 || parsed.confidence > 1.0) {
    throw RangeError("parse_verbalized: confidence " + last[2].str() +
                     " outside [0,1]");
  }
  return parsed;
}

}  // namespace confroute::confidence
