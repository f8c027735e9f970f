#include "confroute/cli.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "confroute/annotator.hpp"
#include "confroute/calibration.hpp"
#include "confroute/confidence.hpp"
#include "confroute/core.hpp"
#include "confroute/gateway.hpp"
#include "confroute/mock_backend.hpp"
#include "confroute/rejection.hpp"
#include "confroute/routing.hpp"
#include "confroute/tinylm.hpp"

namespace confroute::cli {

namespace {

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> fractions;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) {
    fractions.push_back(std::stod(part));
  }
  if (fractions.size() != 3) {
    throw std::invalid_argument("--fractions expects three comma-separated values");
  }
  return fractions;
}

std::unordered_map<std::string, const PredictionRecord*> index_predictions(
    const std::vector<PredictionRecord>& predictions) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& prediction : predictions) {
    by_id[prediction.query_id] = &prediction;
  }
  return by_id;
}

// Confidence scores for the truth set, in truth order.
std::vector<confidence::ConfidenceScore> aligned_scores(
    const std::vector<confidence::ScoredQuery>& scores, const Dataset& truths) {
  std::unordered_map<std::string, const confidence::ScoredQuery*> by_id;
  for (const auto& scored : scores) by_id[scored.query_id] = &scored;
  std::vector<confidence::ConfidenceScore> out;
  out.reserve(truths.records.size());
  for (const auto& record : truths.records) {
    const auto it = by_id.find(record.id);
    if (it == by_id.end()) {
      throw routing::AlignmentError("no score for query '" + record.id + "'");
    }
    out.push_back(it->second->score);
  }
  return out;
}

// Vocabulary from every whitespace token in the corpus, sorted for
// determinism. Confidence tokens are excluded here; they are appended by
// add_confidence_tokens so they land on the last two ids.
tinylm::Vocab vocab_from_corpus(const std::vector<std::string>& texts,
                                bool with_end_token) {
  std::set<std::string> tokens;
  for (const auto& text : texts) {
    std::istringstream stream(text);
    std::string token;
    while (stream >> token) {
      if (token == annotator::kUnconfidentToken || token == annotator::kConfidentToken) {
        continue;
      }
      tokens.insert(token);
    }
  }
  if (with_end_token) {
    tokens.insert(tinylm::kEndToken);
  }
  return tinylm::Vocab::from_tokens({tokens.begin(), tokens.end()});
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string joined;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) joined += ' ';
    joined += tokens[i];
  }
  return joined;
}

struct IngestOptions {
  std::string in_path;
  std::string split_tag{"train"};
  std::string out_path;
  std::string fractions;
  std::uint64_t seed{0};
  std::string out_train, out_val, out_test;
};

void run_ingest(const IngestOptions& options) {
  const Dataset dataset = load_jsonl(options.in_path, split_from_string(options.split_tag));
  if (!options.fractions.empty()) {
    const auto fractions = parse_fractions(options.fractions);
    if (options.out_train.empty() || options.out_val.empty() || options.out_test.empty()) {
      throw std::invalid_argument(
          "--fractions requires --out-train, --out-val and --out-test");
    }
    const SplitResult result =
        split(dataset, {fractions[0], fractions[1], fractions[2]}, RngSeed{options.seed});
    save_jsonl(result.train, options.out_train);
    save_jsonl(result.val, options.out_val);
    save_jsonl(result.test, options.out_test);
    return;
  }
  if (options.out_path.empty()) {
    throw std::invalid_argument("ingest needs --out (or --fractions with three outputs)");
  }
  save_jsonl(dataset, options.out_path);
}

struct AnnotateOptions {
  std::string train_path;
  std::string preds_path;
  double alpha{1.0};
  std::uint64_t seed{0};
  std::string out_path;
};

void run_annotate(const AnnotateOptions& options) {
  const Dataset train = load_jsonl(options.train_path, Split::train);
  const auto predictions = load_predictions(options.preds_path);
  const auto examples =
      annotator::annotate(train, predictions, {options.alpha, RngSeed{options.seed}});
  annotator::save_augmented(examples, options.out_path);

  std::size_t confident = 0;
  for (const auto& example : examples) {
    confident += example.confidence_tag == annotator::ConfidenceTag::CN ? 1 : 0;
  }
  const std::size_t unconfident = examples.size() - confident;
  std::cout << "wrote " << examples.size() << " examples (" << confident << " CN, "
            << unconfident << " UN";
  if (unconfident > 0) {
    std::cout << ", CN:UN ratio " << annotator::un_cn_ratio(examples);
  }
  std::cout << ")" << std::endl;
}

struct TrainOptions {
  std::string aug_path;
  std::string data_path;
  std::string init_path;
  std::string out_path;
  int width{32};
  int blocks{1};
  int max_seq_len{64};
  int epochs{5};
  double learning_rate{0.5};
  int batch_size{16};
  std::uint64_t seed{0};
  int grad_check_every{0};
};

void run_train(const TrainOptions& options) {
  if (options.aug_path.empty() == options.data_path.empty()) {
    throw std::invalid_argument("train needs exactly one of --aug or --data");
  }
  tinylm::TrainConfig config;
  config.learning_rate = options.learning_rate;
  config.epochs = options.epochs;
  config.batch_size = options.batch_size;
  config.seed = RngSeed{options.seed};
  if (options.grad_check_every > 0) config.grad_check_every = options.grad_check_every;

  if (!options.data_path.empty()) {
    // Base-task training on ground-truth completions terminated by <END>.
    const Dataset data = load_jsonl(options.data_path, Split::train);
    std::vector<std::string> corpus;
    for (const auto& record : data.records) {
      corpus.push_back(model_input(record));
      if (!record.ground_truth.is_reject()) corpus.push_back(record.ground_truth.text);
    }
    tinylm::TinyModel model =
        options.init_path.empty()
            ? tinylm::TinyModel::init(vocab_from_corpus(corpus, true), options.width,
                                      options.max_seq_len, options.blocks,
                                      RngSeed{options.seed})
            : tinylm::load_checkpoint(options.init_path);
    std::vector<tinylm::MaskedSequence> sequences;
    for (const auto& record : data.records) {
      if (record.ground_truth.is_reject()) {
        throw SchemaError(0, "base training data cannot contain reject labels");
      }
      tinylm::MaskedSequence sequence;
      sequence.tokens = model.vocab.encode(model_input(record));
      const std::size_t prompt_len = sequence.tokens.size();
      const auto completion = model.vocab.encode(record.ground_truth.text);
      sequence.tokens.insert(sequence.tokens.end(), completion.begin(), completion.end());
      sequence.tokens.push_back(model.vocab.end_id());
      sequence.weights.assign(sequence.tokens.size() - 1, 0.0);
      for (std::size_t i = prompt_len - 1; i < sequence.weights.size(); ++i) {
        sequence.weights[i] = 1.0;
      }
      sequences.push_back(std::move(sequence));
    }
    const auto trained = tinylm::train_sequences(std::move(model), sequences, config);
    tinylm::save_checkpoint(trained, options.out_path);
    return;
  }

  const auto examples = annotator::load_augmented(options.aug_path);
  tinylm::TinyModel model = [&] {
    if (!options.init_path.empty()) {
      tinylm::TinyModel loaded = tinylm::load_checkpoint(options.init_path);
      return loaded.vocab.has_confidence_tokens() ? std::move(loaded)
                                                  : tinylm::add_confidence_tokens(loaded);
    }
    std::vector<std::string> corpus;
    for (const auto& example : examples) {
      corpus.push_back(example.prompt);
      corpus.push_back(join_tokens(example.completion_tokens));
    }
    return tinylm::add_confidence_tokens(
        tinylm::TinyModel::init(vocab_from_corpus(corpus, false), options.width,
                                options.max_seq_len, options.blocks,
                                RngSeed{options.seed}));
  }();
  const auto trained = tinylm::train(std::move(model), examples, config);
  tinylm::save_checkpoint(trained, options.out_path);
}

struct PredictOptions {
  std::string model_path;
  std::string data_path;
  std::string out_path;
  std::string scores_path;
  std::string model_id;
  int max_len{4};
};

void run_predict(const PredictOptions& options) {
  const tinylm::TinyModel model = tinylm::load_checkpoint(options.model_path);
  if (!options.scores_path.empty() && !model.vocab.has_confidence_tokens()) {
    throw std::invalid_argument(
        "--scores needs a model with confidence tokens; this checkpoint has none");
  }
  const Dataset data = load_jsonl(options.data_path, Split::test);
  const std::string model_id =
      options.model_id.empty() ? "tinylm" : options.model_id;

  std::vector<PredictionRecord> predictions;
  std::vector<confidence::ScoredQuery> scores;
  predictions.reserve(data.records.size());
  for (const auto& record : data.records) {
    const auto prompt = model.vocab.encode(model_input(record));
    const auto started = std::chrono::steady_clock::now();
    const auto greedy = tinylm::predict_greedy(model, prompt, options.max_len);
    PredictionRecord prediction;
    prediction.query_id = record.id;
    prediction.model_id = model_id;
    std::vector<std::string> answer_tokens;
    for (int id : greedy.tokens) answer_tokens.push_back(model.vocab.token(id));
    prediction.answer = join_tokens(answer_tokens);
    prediction.token_probs = greedy.token_probs;
    if (model.vocab.has_confidence_tokens()) {
      const auto pair = tinylm::confidence_probs(model, prompt, greedy.tokens);
      prediction.p_un = pair.p_un;
      prediction.p_cn = pair.p_cn;
      if (!options.scores_path.empty()) {
        scores.push_back(
            {record.id, confidence::self_ref_score(pair.p_un, pair.p_cn)});
      }
    }
    prediction.latency_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    prediction.token_count = std::max<std::uint64_t>(1, greedy.tokens.size());
    predictions.push_back(std::move(prediction));
  }
  save_predictions(predictions, options.out_path);
  if (!options.scores_path.empty()) {
    confidence::save_scores(scores, options.scores_path);
  }
}

struct CurveOptions {
  std::string local_path;
  std::string remote_path;
  std::string scores_path;
  std::string truths_path;
  std::string calib_scores_path;
  bool in_sample{false};
  int steps{20};
  std::string out_path;
  double target_accuracy{-1.0};  // eval-route only; <0 means "remote accuracy"
  std::string summary_path;      // eval-route only
};

routing::TradeoffCurve build_curve(const CurveOptions& options, Dataset& truths_out,
                                   double& local_accuracy, double& remote_accuracy) {
  const auto local = load_predictions(options.local_path);
  const auto remote = load_predictions(options.remote_path);
  const auto scores = confidence::load_scores(options.scores_path);
  truths_out = load_jsonl(options.truths_path, Split::test);
  const auto eval_scores = aligned_scores(scores, truths_out);

  if (options.calib_scores_path.empty() && !options.in_sample) {
    throw std::invalid_argument(
        "thresholds need a calibration set: pass --calib-scores FILE or opt into "
        "--in-sample");
  }
  std::vector<double> threshold_source;
  if (!options.calib_scores_path.empty()) {
    for (const auto& scored : confidence::load_scores(options.calib_scores_path)) {
      threshold_source.push_back(scored.score.value);
    }
  } else {
    for (const auto& score : eval_scores) threshold_source.push_back(score.value);
  }
  const auto thresholds = routing::quantile_thresholds(threshold_source, options.steps);
  const auto curve =
      routing::tradeoff_curve(local, remote, eval_scores, truths_out, thresholds);

  const auto by_id_local = index_predictions(local);
  const auto by_id_remote = index_predictions(remote);
  std::size_t local_correct = 0;
  std::size_t remote_correct = 0;
  for (const auto& record : truths_out.records) {
    local_correct += is_correct(*by_id_local.at(record.id), record) ? 1 : 0;
    remote_correct += is_correct(*by_id_remote.at(record.id), record) ? 1 : 0;
  }
  local_accuracy = static_cast<double>(local_correct) / truths_out.records.size();
  remote_accuracy = static_cast<double>(remote_correct) / truths_out.records.size();
  return curve;
}

void run_curve(const CurveOptions& options) {
  Dataset truths;
  double local_accuracy = 0.0;
  double remote_accuracy = 0.0;
  const auto curve = build_curve(options, truths, local_accuracy, remote_accuracy);
  routing::save_curve_csv(curve, options.out_path);
}

void run_eval_route(const CurveOptions& options) {
  Dataset truths;
  double local_accuracy = 0.0;
  double remote_accuracy = 0.0;
  const auto curve = build_curve(options, truths, local_accuracy, remote_accuracy);

  const double target =
      options.target_accuracy >= 0.0 ? options.target_accuracy : remote_accuracy;
  const auto parity = routing::parity_routing_rate(curve, target);

  nlohmann::ordered_json summary;
  summary["local_accuracy"] = local_accuracy;
  summary["remote_accuracy"] = remote_accuracy;
  summary["target_accuracy"] = target;
  if (parity.has_value()) {
    summary["parity_routing_rate"] = *parity;
    const auto point = std::find_if(
        curve.points.begin(), curve.points.end(),
        [&](const routing::TradeoffPoint& p) { return p.routing_rate == *parity; });
    const double remote_latency = curve.points.back().mean_latency_s;
    summary["mixture_latency_s"] = point->mean_latency_s;
    summary["speedup_vs_remote"] = remote_latency / point->mean_latency_s;
  } else {
    summary["parity_routing_rate"] = nullptr;
  }
  std::ofstream out(options.summary_path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + options.summary_path);
  }
  out << summary.dump(2) << '\n';
}

struct RejectOptions {
  std::string make_set_path;
  double fraction{0.5};
  std::uint64_t seed{0};
  std::string out_set_path;
  std::string scores_path;
  std::string truths_path;
  std::string out_roc_path;
};

void run_eval_reject(const RejectOptions& options) {
  bool did_work = false;
  if (!options.make_set_path.empty()) {
    if (options.out_set_path.empty()) {
      throw std::invalid_argument("--make-set requires --out-set");
    }
    const Dataset dataset = load_jsonl(options.make_set_path, Split::test);
    const Dataset rejection_set =
        rejection::build_rejection_set(dataset, options.fraction, RngSeed{options.seed});
    save_jsonl(rejection_set, options.out_set_path);
    did_work = true;
  }
  if (!options.scores_path.empty()) {
    if (options.truths_path.empty() || options.out_roc_path.empty()) {
      throw std::invalid_argument("--scores requires --truths and --out-roc");
    }
    const Dataset truths = load_jsonl(options.truths_path, Split::test);
    const auto scores = confidence::load_scores(options.scores_path);
    const auto eval_scores = aligned_scores(scores, truths);
    std::vector<bool> is_reject;
    is_reject.reserve(truths.records.size());
    for (const auto& record : truths.records) {
      is_reject.push_back(record.ground_truth.is_reject());
    }
    const auto curve = rejection::roc_curve(eval_scores, is_reject);
    rejection::save_roc_csv(curve, options.out_roc_path);
    did_work = true;
  }
  if (!did_work) {
    throw std::invalid_argument("eval-reject needs --make-set and/or --scores");
  }
}

struct CalibrateOptions {
  std::string scores_path;
  std::string preds_path;
  std::string truths_path;
  int bins{10};
  std::string out_path;
};

void run_calibrate(const CalibrateOptions& options) {
  const Dataset truths = load_jsonl(options.truths_path, Split::test);
  const auto predictions = load_predictions(options.preds_path);
  const auto scores = confidence::load_scores(options.scores_path);
  const auto eval_scores = aligned_scores(scores, truths);
  const auto by_id = index_predictions(predictions);

  std::vector<double> values;
  std::vector<bool> correct;
  values.reserve(truths.records.size());
  for (std::size_t i = 0; i < truths.records.size(); ++i) {
    const auto& record = truths.records[i];
    const auto it = by_id.find(record.id);
    if (it == by_id.end()) {
      throw routing::AlignmentError("no prediction for query '" + record.id + "'");
    }
    values.push_back(eval_scores[i].value);
    correct.push_back(is_correct(*it->second, record));
  }
  const auto report = calibration::report(values, correct, options.bins);
  std::ofstream out(options.out_path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + options.out_path);
  }
  out << calibration::to_json(report) << '\n';
}

struct ServeOptions {
  std::string config_path;
};

void run_serve(const ServeOptions& options) {
  gateway::GatewayConfig config = gateway::GatewayConfig::from_file(options.config_path);
  config.apply_env_overrides();
  gateway::Gateway gw(config);
  const int port = gw.start();
  std::cout << "gateway listening on " << config.listen_address.substr(
                   0, config.listen_address.rfind(':'))
            << ":" << port << std::endl;
  // Serve until interrupted.
  static volatile std::sig_atomic_t stop_requested = 0;
  std::signal(SIGINT, [](int) { stop_requested = 1; });
  std::signal(SIGTERM, [](int) { stop_requested = 1; });
  while (stop_requested == 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  gw.stop();
}

struct MockServeOptions {
  std::string script_path;
  std::string listen_address{"127.0.0.1:0"};
};

void run_mock_serve(const MockServeOptions& options) {
  const auto script = mock_backend::Script::from_file(options.script_path);
  const auto server = mock_backend::serve_script(script, options.listen_address);
  std::cout << "mock backend listening on port " << server->port() << std::endl;
  static volatile std::sig_atomic_t stop_requested = 0;
  std::signal(SIGINT, [](int) { stop_requested = 1; });
  std::signal(SIGTERM, [](int) { stop_requested = 1; });
  while (stop_requested == 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  server->stop();
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"confidence-gated routing toolkit"};
  app.require_subcommand(1);
  app.footer(
      "File schemas (JSONL, one object per line):\n"
      "  dataset:     {\"id\", \"prompt\", \"choices\": [{\"letter\", \"text\"}]|null,\n"
      "                \"ground_truth\": str | \"<REJECT>\", \"subject\": str|null}\n"
      "  predictions: {\"query_id\", \"model_id\", \"answer\", \"token_probs\": [float],\n"
      "                \"p_un\", \"p_cn\", \"latency_s\", \"token_count\"}\n"
      "  augmented:   {\"query_id\", \"prompt\", \"completion\": [str],\n"
      "                \"loss_weights\": [0|1], \"tag\": \"CN\"|\"UN\"}\n"
      "  scores:      {\"query_id\", \"value\", \"method\"}\n"
      "Curve CSV header: routing_rate,accuracy,mean_latency_s. ROC CSV: fpr,tpr\n"
      "with a '# auc = ...' footer. Gateway/mock configs are JSON; see README.");

  IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "validate and re-serialize a dataset");
  ingest_cmd->add_option("--in", ingest.in_path, "input JSONL")->required();
  ingest_cmd->add_option("--split-tag", ingest.split_tag, "train|val|test");
  ingest_cmd->add_option("--out", ingest.out_path, "output JSONL");
  ingest_cmd->add_option("--fractions", ingest.fractions, "train,val,test fractions");
  ingest_cmd->add_option("--seed", ingest.seed, "split seed");
  ingest_cmd->add_option("--out-train", ingest.out_train, "train split output");
  ingest_cmd->add_option("--out-val", ingest.out_val, "val split output");
  ingest_cmd->add_option("--out-test", ingest.out_test, "test split output");
  ingest_cmd->callback([&] { run_ingest(ingest); });

  AnnotateOptions annotate;
  auto* annotate_cmd =
      app.add_subcommand("annotate", "build the confidence-token training set");
  annotate_cmd->add_option("--train", annotate.train_path, "training JSONL")->required();
  annotate_cmd->add_option("--preds", annotate.preds_path, "base-model predictions")
      ->required();
  annotate_cmd->add_option("--alpha", annotate.alpha, "kept fraction of UN samples");
  annotate_cmd->add_option("--seed", annotate.seed, "subsample/shuffle seed");
  annotate_cmd->add_option("--out", annotate.out_path, "augmented JSONL")->required();
  annotate_cmd->callback([&] { run_annotate(annotate); });

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train the tiny model");
  train_cmd->add_option("--aug", train.aug_path, "augmented JSONL (confidence training)");
  train_cmd->add_option("--data", train.data_path, "dataset JSONL (base training)");
  train_cmd->add_option("--init", train.init_path, "checkpoint to continue from");
  train_cmd->add_option("--out", train.out_path, "output checkpoint")->required();
  train_cmd->add_option("--width", train.width, "embedding width");
  train_cmd->add_option("--blocks", train.blocks, "causal blocks");
  train_cmd->add_option("--max-seq-len", train.max_seq_len, "max sequence length");
  train_cmd->add_option("--epochs", train.epochs, "training epochs");
  train_cmd->add_option("--lr", train.learning_rate, "learning rate");
  train_cmd->add_option("--batch-size", train.batch_size, "batch size");
  train_cmd->add_option("--seed", train.seed, "init/shuffle seed");
  train_cmd->add_option("--grad-check-every", train.grad_check_every,
                        "run a gradient check every N steps");
  train_cmd->callback([&] { run_train(train); });

  PredictOptions predict;
  auto* predict_cmd = app.add_subcommand("predict", "greedy predictions for a dataset");
  predict_cmd->add_option("--model", predict.model_path, "model checkpoint")->required();
  predict_cmd->add_option("--data", predict.data_path, "dataset JSONL")->required();
  predict_cmd->add_option("--out", predict.out_path, "predictions JSONL")->required();
  predict_cmd->add_option("--scores", predict.scores_path,
                          "also write self_ref scores JSONL");
  predict_cmd->add_option("--model-id", predict.model_id, "model id tag");
  predict_cmd->add_option("--max-len", predict.max_len, "max answer tokens");
  predict_cmd->callback([&] { run_predict(predict); });

  CurveOptions curve;
  auto* curve_cmd = app.add_subcommand("curve", "routing-rate/accuracy tradeoff CSV");
  auto add_curve_options = [](CLI::App* cmd, CurveOptions& options) {
    cmd->add_option("--local", options.local_path, "local predictions")->required();
    cmd->add_option("--remote", options.remote_path, "remote predictions")->required();
    cmd->add_option("--scores", options.scores_path, "confidence scores")->required();
    cmd->add_option("--truths", options.truths_path, "ground-truth dataset")->required();
    cmd->add_option("--calib-scores", options.calib_scores_path,
                    "calibration scores for thresholds");
    cmd->add_flag("--in-sample", options.in_sample,
                  "derive thresholds from the evaluation scores themselves");
    cmd->add_option("--steps", options.steps, "quantile steps");
  };
  add_curve_options(curve_cmd, curve);
  curve_cmd->add_option("--out", curve.out_path, "curve CSV")->required();
  curve_cmd->callback([&] { run_curve(curve); });

  CurveOptions eval_route;
  auto* eval_route_cmd =
      app.add_subcommand("eval-route", "parity routing rate and speedup summary");
  add_curve_options(eval_route_cmd, eval_route);
  eval_route_cmd->add_option("--target-accuracy", eval_route.target_accuracy,
                             "parity target (default: remote accuracy)");
  eval_route_cmd->add_option("--out", eval_route.summary_path, "summary JSON")->required();
  eval_route_cmd->callback([&] { run_eval_route(eval_route); });

  RejectOptions reject;
  auto* reject_cmd =
      app.add_subcommand("eval-reject", "rejection set construction and ROC");
  reject_cmd->add_option("--make-set", reject.make_set_path, "dataset to corrupt");
  reject_cmd->add_option("--fraction", reject.fraction, "corrupted fraction");
  reject_cmd->add_option("--seed", reject.seed, "corruption seed");
  reject_cmd->add_option("--out-set", reject.out_set_path, "corrupted dataset JSONL");
  reject_cmd->add_option("--scores", reject.scores_path, "confidence scores");
  reject_cmd->add_option("--truths", reject.truths_path, "rejection dataset JSONL");
  reject_cmd->add_option("--out-roc", reject.out_roc_path, "ROC CSV");
  reject_cmd->callback([&] { run_eval_reject(reject); });

  CalibrateOptions calibrate;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "ECE/Brier/CE report");
  calibrate_cmd->add_option("--scores", calibrate.scores_path, "confidence scores")
      ->required();
  calibrate_cmd->add_option("--preds", calibrate.preds_path, "predictions")->required();
  calibrate_cmd->add_option("--truths", calibrate.truths_path, "ground-truth dataset")
      ->required();
  calibrate_cmd->add_option("--bins", calibrate.bins, "ECE bins");
  calibrate_cmd->add_option("--out", calibrate.out_path, "report JSON")->required();
  calibrate_cmd->callback([&] { run_calibrate(calibrate); });

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "run the routing gateway");
  serve_cmd->add_option("--config", serve.config_path, "gateway config JSON")->required();
  serve_cmd->callback([&] { run_serve(serve); });

  MockServeOptions mock;
  auto* mock_cmd = app.add_subcommand("mock-serve", "run a scripted model backend");
  mock_cmd->add_option("--script", mock.script_path, "script JSON")->required();
  mock_cmd->add_option("--listen", mock.listen_address, "host:port");
  mock_cmd->callback([&] { run_mock_serve(mock); });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return 1;
  }
  return 0;
}

}  // namespace confroute::cli
