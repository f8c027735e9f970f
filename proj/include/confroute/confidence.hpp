#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace confroute::confidence {

enum class Method {
  self_ref,
  verbalized,
  yes_no,
  logits_zero_shot,
  logits_finetuned,
};

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct ConfidenceScore {
  double value{0.0};  // always in [0, 1]
  Method method{Method::self_ref};
};

/// Both token probabilities are zero, so no confidence can be read out.
struct ZeroSumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// c = p_cn / (p_un + p_cn).
ConfidenceScore self_ref_score(double p_un, double p_cn);

/// c = p_yes / (p_yes + p_no).
ConfidenceScore yes_no_score(double p_yes, double p_no);

enum class LogitsKind { single_token, free_text };

/// single_token: the probability of the one predicted token (list must have
/// length 1). free_text: arithmetic mean over the emitted answer tokens.
ConfidenceScore logits_score(std::span<const double> token_probs, LogitsKind kind,
                             Method method = Method::logits_zero_shot);

struct VerbalizedAnswer {
  std::string answer;
  double confidence{0.0};
};

/// Extracts the last "##Answer:<answer> ##Confidence:<number>" occurrence.
/// Throws ParseError when the pattern is absent and RangeError when the
/// parsed confidence falls outside [0, 1].
VerbalizedAnswer parse_verbalized(const std::string& text);

/// One JSONL row of a score file: {"query_id", "value", "method"}.
struct ScoredQuery {
  std::string query_id;
  ConfidenceScore score;
};

std::vector<ScoredQuery> load_scores(const std::string& path);
void save_scores(std::span<const ScoredQuery> scores, const std::string& path);

}  // namespace confroute::confidence
