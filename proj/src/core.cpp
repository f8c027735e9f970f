#include "confroute/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace confroute {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("unknown split tag");
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split tag: " + name);
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

void validate(const QueryRecord& record) {
  if (record.id.empty()) {
    throw SchemaError(0, "record id must be nonempty");
  }
  if (record.choices.has_value()) {
    const auto& choices = *record.choices;
    if (choices.empty()) {
      throw SchemaError(0, "record " + record.id + ": choices list is empty");
    }
    for (std::size_t i = 0; i < choices.size(); ++i) {
      const std::string expected(1, static_cast<char>('A' + i));
      if (choices[i].letter != expected) {
        throw SchemaError(0, "record " + record.id + ": choice letter '" +
                                 choices[i].letter + "' at index " +
                                 std::to_string(i) + " is not '" + expected + "'");
      }
    }
    if (record.ground_truth.kind == AnswerValue::Kind::free_text) {
      throw SchemaError(0, "record " + record.id +
                               ": choice question carries a free-text ground truth");
    }
    if (!record.ground_truth.is_reject()) {
      const auto& letter = record.ground_truth.text;
      const bool found = std::any_of(choices.begin(), choices.end(),
                                     [&](const Choice& c) { return c.letter == letter; });
      if (!found) {
        throw SchemaError(0, "record " + record.id + ": ground_truth '" + letter +
                                 "' does not match any choice letter");
      }
    }
  } else {
    if (record.ground_truth.kind == AnswerValue::Kind::choice_letter) {
      throw SchemaError(0, "record " + record.id +
                               ": choice-letter ground truth without choices");
    }
    if (!record.ground_truth.is_reject() && record.ground_truth.text.empty()) {
      throw SchemaError(0, "record " + record.id + ": free-form ground_truth is empty");
    }
  }
}

void validate(const PredictionRecord& prediction) {
  if (prediction.query_id.empty()) {
    throw SchemaError(0, "prediction query_id must be nonempty");
  }
  for (double p : prediction.token_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw SchemaError(0, "prediction " + prediction.query_id +
                               ": token_prob outside [0,1]");
    }
  }
  const bool un_ok = prediction.p_un >= 0.0 && prediction.p_un <= 1.0;
  const bool cn_ok = prediction.p_cn >= 0.0 && prediction.p_cn <= 1.0;
  if (!un_ok || !cn_ok || prediction.p_un + prediction.p_cn > 1.0 + 1e-9) {
    throw SchemaError(0, "prediction " + prediction.query_id +
                             ": p_un/p_cn are not a probability pair");
  }
  if (!std::isfinite(prediction.latency_s) || prediction.latency_s < 0.0) {
    throw SchemaError(0, "prediction " + prediction.query_id +
                             ": latency_s must be finite and nonnegative");
  }
  if (prediction.token_count == 0) {
    throw SchemaError(0, "prediction " + prediction.query_id +
                             ": token_count must be positive");
  }
}

bool is_correct(const std::string& answer, const QueryRecord& record) {
  switch (record.ground_truth.kind) {
    case AnswerValue::Kind::reject:
      return answer == kRejectLabel;
    case AnswerValue::Kind::choice_letter:
      return trim(answer) == record.ground_truth.text;
    case AnswerValue::Kind::free_text:
      return answer == record.ground_truth.text;
  }
  return false;
}

bool is_correct(const PredictionRecord& prediction, const QueryRecord& record) {
  return is_correct(prediction.answer, record);
}

std::string model_input(const QueryRecord& record) {
  if (!record.choices.has_value()) {
    return record.prompt;
  }
  std::string input;
  for (const auto& choice : *record.choices) {
    input += choice.letter;
    input += ' ';
    input += choice.text;
    input += ' ';
  }
  input += record.prompt;
  return input;
}

namespace {

const json* find_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) return nullptr;
  return &*it;
}

std::string require_string(const json& obj, const char* key, std::size_t line_no) {
  const json* field = find_field(obj, key);
  if (field == nullptr || !field->is_string()) {
    throw SchemaError(line_no, std::string("missing or non-string field '") + key + "'");
  }
  return field->get<std::string>();
}

double require_number(const json& obj, const char* key, std::size_t line_no) {
  const json* field = find_field(obj, key);
  if (field == nullptr || !field->is_number()) {
    throw SchemaError(line_no, std::string("missing or non-numeric field '") + key + "'");
  }
  return field->get<double>();
}

}  // namespace

QueryRecord query_from_json(const std::string& text, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& err) {
    throw SchemaError(line_no, std::string("invalid JSON: ") + err.what());
  }
  if (!obj.is_object()) {
    throw SchemaError(line_no, "record is not a JSON object");
  }

  QueryRecord record;
  record.id = require_string(obj, "id", line_no);
  record.prompt = require_string(obj, "prompt", line_no);

  if (const json* choices = find_field(obj, "choices");
      choices != nullptr && !choices->is_null()) {
    if (!choices->is_array()) {
      throw SchemaError(line_no, "field 'choices' must be an array or null");
    }
    std::vector<Choice> parsed;
    parsed.reserve(choices->size());
    for (const auto& entry : *choices) {
      if (!entry.is_object()) {
        throw SchemaError(line_no, "choice entries must be objects");
      }
      parsed.push_back({require_string(entry, "letter", line_no),
                        require_string(entry, "text", line_no)});
    }
    record.choices = std::move(parsed);
  }

  const std::string truth = require_string(obj, "ground_truth", line_no);
  if (truth == kRejectLabel) {
    record.ground_truth = AnswerValue::reject();
  } else if (record.choices.has_value()) {
    record.ground_truth = AnswerValue::choice(truth);
  } else {
    record.ground_truth = AnswerValue::free_form(truth);
  }

  if (const json* subject = find_field(obj, "subject");
      subject != nullptr && !subject->is_null()) {
    if (!subject->is_string()) {
      throw SchemaError(line_no, "field 'subject' must be a string or null");
    }
    record.subject = subject->get<std::string>();
  }

  try {
    validate(record);
  } catch (const SchemaError& err) {
    throw SchemaError(line_no, err.what());
  }
  return record;
}

std::string to_json_line(const QueryRecord& record) {
  ordered_json obj;
  obj["id"] = record.id;
  obj["prompt"] = record.prompt;
  if (record.choices.has_value()) {
    ordered_json choices = ordered_json::array();
    for (const auto& choice : *record.choices) {
      choices.push_back({{"letter", choice.letter}, {"text", choice.text}});
    }
    obj["choices"] = std::move(choices);
  } else {
    obj["choices"] = nullptr;
  }
  obj["ground_truth"] =
      record.ground_truth.is_reject() ? std::string(kRejectLabel) : record.ground_truth.text;
  if (record.subject.has_value()) {
    obj["subject"] = *record.subject;
  } else {
    obj["subject"] = nullptr;
  }
  return obj.dump();
}

Dataset load_jsonl(const std::string& path, Split split_tag) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  Dataset dataset;
  dataset.split_tag = split_tag;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    QueryRecord record = query_from_json(line, line_no);
    if (!seen.insert(record.id).second) {
      throw DuplicateIdError(line_no, "duplicate record id '" + record.id + "'");
    }
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (const auto& record : dataset.records) {
    out << to_json_line(record) << '\n';
  }
}

std::string to_json_line(const PredictionRecord& prediction) {
  ordered_json obj;
  obj["query_id"] = prediction.query_id;
  obj["model_id"] = prediction.model_id;
  obj["answer"] = prediction.answer;
  obj["token_probs"] = prediction.token_probs;
  obj["p_un"] = prediction.p_un;
  obj["p_cn"] = prediction.p_cn;
  obj["latency_s"] = prediction.latency_s;
  obj["token_count"] = prediction.token_count;
  return obj.dump();
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<PredictionRecord> predictions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& err) {
      throw SchemaError(line_no, std::string("invalid JSON: ") + err.what());
    }
    PredictionRecord prediction;
    prediction.query_id = require_string(obj, "query_id", line_no);
    prediction.model_id = require_string(obj, "model_id", line_no);
    prediction.answer = require_string(obj, "answer", line_no);
    const json* probs = find_field(obj, "token_probs");
    if (probs == nullptr || !probs->is_array()) {
      throw SchemaError(line_no, "missing or non-array field 'token_probs'");
    }
    for (const auto& p : *probs) {
      if (!p.is_number()) {
        throw SchemaError(line_no, "token_probs entries must be numbers");
      }
      prediction.token_probs.push_back(p.get<double>());
    }
    prediction.p_un = require_number(obj, "p_un", line_no);
    prediction.p_cn = require_number(obj, "p_cn", line_no);
    prediction.latency_s = require_number(obj, "latency_s", line_no);
    const double count = require_number(obj, "token_count", line_no);
    if (count < 1.0 || count != std::floor(count)) {
      throw SchemaError(line_no, "token_count must be a positive integer");
    }
    prediction.token_count = static_cast<std::uint64_t>(count);
    try {
      validate(prediction);
    } catch (const SchemaError& err) {
      throw SchemaError(line_no, err.what());
    }
    predictions.push_back(std::move(prediction));
  }
  return predictions;
}

void save_predictions(const std::vector<PredictionRecord>& predictions,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (const auto& prediction : predictions) {
    out << to_json_line(prediction) << '\n';
  }
}

SplitResult split(const Dataset& dataset, SplitFractions fractions, RngSeed seed) {
  const double parts[3] = {fractions.train, fractions.val, fractions.test};
  double sum = 0.0;
  for (double f : parts) {
    if (!(f >= 0.0)) {
      throw InvalidFractionsError("split fractions must be nonnegative");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidFractionsError("split fractions must sum to 1");
  }

  const std::size_t total = dataset.records.size();
  std::size_t sizes[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = parts[i] * static_cast<double>(total);
    sizes[i] = static_cast<std::size_t>(std::floor(target));
    remainders[i] = target - std::floor(target);
    assigned += sizes[i];
  }
  // Largest remainder; ties resolved by split order (train, val, test).
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3,
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (std::size_t leftover = total - assigned, i = 0; leftover > 0; --leftover, ++i) {
    ++sizes[order[i % 3]];
  }

  std::vector<std::size_t> indices(total);
  for (std::size_t i = 0; i < total; ++i) indices[i] = i;
  Rng rng(seed);
  rng.shuffle(indices);

  SplitResult result;
  result.train.split_tag = Split::train;
  result.val.split_tag = Split::val;
  result.test.split_tag = Split::test;
  Dataset* outputs[3] = {&result.train, &result.val, &result.test};
  std::size_t cursor = 0;
  for (int i = 0; i < 3; ++i) {
    std::vector<std::size_t> member(indices.begin() + cursor,
                                    indices.begin() + cursor + sizes[i]);
    cursor += sizes[i];
    std::sort(member.begin(), member.end());
    outputs[i]->records.reserve(member.size());
    for (std::size_t idx : member) {
      outputs[i]->records.push_back(dataset.records[idx]);
    }
  }
  return result;
}

}  // namespace confroute
