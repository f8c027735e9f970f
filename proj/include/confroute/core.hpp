#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "confroute/rng.hpp"

namespace confroute {

enum class Split { train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// Serialized ground truth for "none of the above" records.
inline constexpr const char* kRejectLabel = "<REJECT>";

/// A ground truth or model answer: a choice letter, free text, or the
/// reject label. Which kind applies is fixed by the owning record (choice
/// questions carry letters, free-form questions carry text).
struct AnswerValue {
  enum class Kind { choice_letter, free_text, reject };

  Kind kind{Kind::free_text};
  std::string text;

  static AnswerValue choice(std::string letter) {
    return {Kind::choice_letter, std::move(letter)};
  }
  static AnswerValue free_form(std::string text) {
    return {Kind::free_text, std::move(text)};
  }
  static AnswerValue reject() { return {Kind::reject, {}}; }

  bool is_reject() const { return kind == Kind::reject; }

  bool operator==(const AnswerValue&) const = default;
};

struct Choice {
  std::string letter;
  std::string text;

  bool operator==(const Choice&) const = default;
};

/// One task instance: prompt, optional choice list, ground truth.
struct QueryRecord {
  std::string id;
  std::string prompt;
  std::optional<std::vector<Choice>> choices;
  AnswerValue ground_truth;
  std::optional<std::string> subject;

  bool operator==(const QueryRecord&) const = default;
};

struct Dataset {
  std::vector<QueryRecord> records;
  Split split_tag{Split::train};

  bool operator==(const Dataset&) const = default;
};

/// A model's answer to one query plus the token probabilities and timing
/// needed downstream for confidence extraction and latency accounting.
struct PredictionRecord {
  std::string query_id;
  std::string model_id;
  std::string answer;
  std::vector<double> token_probs;
  double p_un{0.0};
  double p_cn{0.0};
  double latency_s{0.0};
  std::uint64_t token_count{1};
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed record. `line` is the 1-based line number within the file, or 0
/// when the record did not come from a file.
struct SchemaError : std::runtime_error {
  std::size_t line;
  SchemaError(std::size_t line_no, const std::string& message)
      : std::runtime_error(line_no == 0
                               ? message
                               : "line " + std::to_string(line_no) + ": " + message),
        line(line_no) {}
};

struct DuplicateIdError : SchemaError {
  using SchemaError::SchemaError;
};

struct InvalidFractionsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Throws SchemaError when the record violates its invariants (letters not
/// consecutive from 'A', ground truth not among the choices, ...).
void validate(const QueryRecord& record);

void validate(const PredictionRecord& prediction);

/// Correctness rule: choice letters compare exact after trimming surrounding
/// whitespace; free text compares exact; a reject ground truth is matched
/// only by the literal reject label.
bool is_correct(const std::string& answer, const QueryRecord& record);

/// Canonical model input for a record: the lettered options ("A <text> B
/// <text> ...") followed by the prompt text, whitespace-joined. Rendering at
/// prediction time keeps edited choice lists (rejection sets) visible to the
/// model. Records without choices pass the prompt through unchanged.
std::string model_input(const QueryRecord& record);

bool is_correct(const PredictionRecord& prediction, const QueryRecord& record);

Dataset load_jsonl(const std::string& path, Split split_tag);
void save_jsonl(const Dataset& dataset, const std::string& path);
std::string to_json_line(const QueryRecord& record);
QueryRecord query_from_json(const std::string& text, std::size_t line_no = 0);

std::vector<PredictionRecord> load_predictions(const std::string& path);
void save_predictions(const std::vector<PredictionRecord>& predictions,
                      const std::string& path);
std::string to_json_line(const PredictionRecord& prediction);

struct SplitFractions {
  double train{0.0};
  double val{0.0};
  double test{0.0};
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded three-way partition. Sizes follow the largest-remainder rule on
/// fraction * N; membership is a seeded shuffle; each split keeps the input's
/// relative record order.
SplitResult split(const Dataset& dataset, SplitFractions fractions, RngSeed seed);

std::string trim(const std::string& text);

}  // namespace confroute
