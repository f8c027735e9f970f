#pragma once

#include <span>
#include <string>
#include <vector>

#include "confroute/core.hpp"

namespace confroute::annotator {

/// Literal confidence-token strings appended after the answer tokens.
inline constexpr const char* kUnconfidentToken = "<UN>";
inline constexpr const char* kConfidentToken = "<CN>";

enum class ConfidenceTag { CN, UN };

std::string to_string(ConfidenceTag tag);
ConfidenceTag tag_from_string(const std::string& name);

struct AnnotationConfig {
  double alpha{1.0};  // kept fraction of unconfident samples, in [0,1]
  RngSeed seed{};
};

/// One fine-tuning sample: the model's own answer tokens followed by a
/// confidence token, with 0/1 loss weights aligned to the completion.
/// Unconfident samples carry weight 0 on every answer token so the wrong
/// answer itself is never reinforced.
struct AugmentedExample {
  std::string query_id;
  std::string prompt;
  std::vector<std::string> completion_tokens;
  std::vector<int> loss_weights;
  ConfidenceTag confidence_tag{ConfidenceTag::CN};
};

struct MissingPredictionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownQueryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Throws SchemaError when the example breaks its invariants (confidence
/// token not last, weights misaligned, tag/weights mismatch).
void validate(const AugmentedExample& example);

/// Confidence-token annotation: correct predictions become CN examples (all
/// kept), incorrect ones become UN examples subsampled to ceil(alpha*|UN|)
/// by seeded shuffle. The output is a seeded shuffle of the union.
std::vector<AugmentedExample> annotate(const Dataset& train,
                                       std::span<const PredictionRecord> predictions,
                                       const AnnotationConfig& config);

/// |CN| / |UN|; throws std::domain_error when no UN example exists.
double un_cn_ratio(std::span<const AugmentedExample> examples);

std::vector<AugmentedExample> load_augmented(const std::string& path);
void save_augmented(std::span<const AugmentedExample> examples, const std::string& path);
std::string to_json_line(const AugmentedExample& example);

/// Whitespace tokenization used to turn an answer string into completion
/// tokens.
std::vector<std::string> tokenize_answer(const std::string& answer);

}  // namespace confroute::annotator
