#include "confroute/annotator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace confroute::annotator {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(ConfidenceTag tag) {
  return tag == ConfidenceTag::CN ? "CN" : "UN";
}

ConfidenceTag tag_from_string(const std::string& name) {
  if (name == "CN") return ConfidenceTag::CN;
  if (name == "UN") return ConfidenceTag::UN;
  throw std::invalid_argument("unknown confidence tag: " + name);
}

std::vector<std::string> tokenize_answer(const std::string& answer) {
  std::istringstream stream(answer);
  std::vector<std::string> tokens;
  std::string token;
  while (stream >> token) {
    tokens.push_back(token);
  }
  return tokens;
}

void validate(const AugmentedExample& example) {
  if (example.completion_tokens.size() != example.loss_weights.size()) {
    throw SchemaError(0, "augmented example '" + example.query_id +
                             "': weights not aligned to completion");
  }
  if (example.completion_tokens.empty()) {
    throw SchemaError(0, "augmented example '" + example.query_id +
                             "': empty completion");
  }
  const std::string expected_token = example.confidence_tag == ConfidenceTag::CN
                                         ? kConfidentToken
                                         : kUnconfidentToken;
  for (std::size_t i = 0; i < example.completion_tokens.size(); ++i) {
    const bool is_last = i + 1 == example.completion_tokens.size();
    const std::string& token = example.completion_tokens[i];
    if (token == kConfidentToken || token == kUnconfidentToken) {
      if (!is_last || token != expected_token) {
        throw SchemaError(0, "augmented example '" + example.query_id +
                                 "': confidence token misplaced");
      }
    } else if (is_last) {
      throw SchemaError(0, "augmented example '" + example.query_id +
                               "': completion does not end in a confidence token");
    }
    const int weight = example.loss_weights[i];
    if (weight != 0 && weight != 1) {
      throw SchemaError(0, "augmented example '" + example.query_id +
                               "': loss weights must be 0 or 1");
    }
    const int expected_weight =
        is_last ? 1 : (example.confidence_tag == ConfidenceTag::CN ? 1 : 0);
    if (weight != expected_weight) {
      throw SchemaError(0, "augmented example '" + example.query_id +
                               "': loss weight " + std::to_string(weight) +
                               " at position " + std::to_string(i) +
                               " contradicts tag " + to_string(example.confidence_tag));
    }
  }
}

namespace {

AugmentedExample make_example(const QueryRecord& record,
                              const PredictionRecord& prediction, ConfidenceTag tag) {
  AugmentedExample example;
  example.query_id = record.id;
  example.prompt = model_input(record);
  example.completion_tokens = tokenize_answer(prediction.answer);
  example.loss_weights.assign(example.completion_tokens.size(),
                              tag == ConfidenceTag::CN ? 1 : 0);
  example.completion_tokens.push_back(tag == ConfidenceTag::CN ? kConfidentToken
                                                               : kUnconfidentToken);
  example.loss_weights.push_back(1);
  example.confidence_tag = tag;
  return example;
}

}  // namespace

std::vector<AugmentedExample> annotate(const Dataset& train,
                                       std::span<const PredictionRecord> predictions,
                                       const AnnotationConfig& config) {
  if (!(config.alpha >= 0.0 && config.alpha <= 1.0)) {
    throw std::invalid_argument("annotate: alpha must lie in [0,1]");
  }
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& prediction : predictions) {
    if (!by_id.emplace(prediction.query_id, &prediction).second) {
      throw UnknownQueryError("annotate: multiple predictions for query '" +
                              prediction.query_id + "'");
    }
  }
  std::unordered_set<std::string> train_ids;
  for (const auto& record : train.records) {
    train_ids.insert(record.id);
  }
  for (const auto& [id, unused] : by_id) {
    if (!train_ids.contains(id)) {
      throw UnknownQueryError("annotate: prediction for unknown query '" + id + "'");
    }
  }

  std::vector<AugmentedExample> confident;
  std::vector<AugmentedExample> unconfident;
  for (const auto& record : train.records) {
    const auto it = by_id.find(record.id);
    if (it == by_id.end()) {
      throw MissingPredictionError("annotate: no prediction for query '" + record.id +
                                   "'");
    }
    const PredictionRecord& prediction = *it->second;
    if (is_correct(prediction, record)) {
      confident.push_back(make_example(record, prediction, ConfidenceTag::CN));
    } else {
      unconfident.push_back(make_example(record, prediction, ConfidenceTag::UN));
    }
  }

  // Count-exact subsample: seeded shuffle, keep the first ceil(alpha*n).
  Rng rng(config.seed);
  const auto keep = static_cast<std::size_t>(
      std::ceil(config.alpha * static_cast<double>(unconfident.size())));
  rng.shuffle(unconfident);
  unconfident.resize(keep);

  std::vector<AugmentedExample> combined = std::move(confident);
  combined.insert(combined.end(), std::make_move_iterator(unconfident.begin()),
                  std::make_move_iterator(unconfident.end()));
  rng.shuffle(combined);
  return combined;
}

double un_cn_ratio(std::span<const AugmentedExample> examples) {
  std::size_t cn = 0;
  std::size_t un = 0;
  for (const auto& example : examples) {
    (example.confidence_tag == ConfidenceTag::CN ? cn : un) += 1;
  }
  if (un == 0) {
    throw std::domain_error("un_cn_ratio: no unconfident examples");
  }
  return static_cast<double>(cn) / static_cast<double>(un);
}

std::string to_json_line(const AugmentedExample& example) {
  ordered_json obj;
  obj["query_id"] = example.query_id;
  obj["prompt"] = example.prompt;
  obj["completion"] = example.completion_tokens;
  obj["loss_weights"] = example.loss_weights;
  obj["tag"] = to_string(example.confidence_tag);
  return obj.dump();
}

void save_augmented(std::span<const AugmentedExample> examples,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (const auto& example : examples) {
    out << to_json_line(example) << '\n';
  }
}

std::vector<AugmentedExample> load_augmented(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<AugmentedExample> examples;
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
    AugmentedExample example;
    try {
      example.query_id = obj.at("query_id").get<std::string>();
      example.prompt = obj.at("prompt").get<std::string>();
      example.completion_tokens = obj.at("completion").get<std::vector<std::string>>();
      example.loss_weights = obj.at("loss_weights").get<std::vector<int>>();
      example.confidence_tag = tag_from_string(obj.at("tag").get<std::string>());
    } catch (const json::exception& err) {
      throw SchemaError(line_no, std::string("bad augmented example: ") + err.what());
    }
    try {
      validate(example);
    } catch (const SchemaError& err) {
      throw SchemaError(line_no, err.what());
    }
    examples.push_back(std::move(example));
  }
  return examples;
}

}  // namespace confroute::annotator
