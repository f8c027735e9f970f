// Acceptance suite: one criterion per section, one PASS/FAIL line each.
// Exit code 0 only when every criterion holds.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>

#include "confroute/annotator.hpp"
#include "confroute/calibration.hpp"
#include "confroute/cli.hpp"
#include "confroute/confidence.hpp"
#include "confroute/core.hpp"
#include "confroute/gateway.hpp"
#include "confroute/mock_backend.hpp"
#include "confroute/rejection.hpp"
#include "confroute/routing.hpp"
#include "confroute/tinylm.hpp"
#include "support/synthetic_task.hpp"
#include "support/test_util.hpp"

using namespace confroute;

namespace {

struct Check {
  std::ostringstream detail;
  bool ok{true};

  void require(bool condition, const std::string& what) {
    if (!condition) {
      ok = false;
      detail << (detail.str().empty() ? "" : "; ") << "FAILED: " << what;
    }
  }
  void note(const std::string& what) {
    detail << (detail.str().empty() ? "" : "; ") << what;
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: score/metric oracle equivalence on randomized fixtures.

double oracle_mean(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double oracle_ece(const std::vector<double>& s, const std::vector<bool>& c, int bins) {
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins;
    const double hi = static_cast<double>(b + 1) / bins;
    double conf = 0.0;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool in_bin = b + 1 == bins ? (s[i] >= lo && s[i] <= hi)
                                        : (s[i] >= lo && s[i] < hi);
      if (!in_bin) continue;
      ++count;
      conf += s[i];
      acc += c[i] ? 1.0 : 0.0;
    }
    if (count == 0) continue;
    total += (static_cast<double>(count) / s.size()) *
             std::abs(acc / count - conf / count);
  }
  return total;
}

double oracle_brier(const std::vector<double>& s, const std::vector<bool>& c) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double y = c[i] ? 1.0 : 0.0;
    sum += (s[i] - y) * (s[i] - y);
  }
  return sum / static_cast<double>(s.size());
}

double oracle_ce(const std::vector<double>& s, const std::vector<bool>& c) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = std::min(std::max(s[i], 1e-12), 1.0 - 1e-12);
    sum += c[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(s.size());
}

double oracle_auc(const std::vector<double>& rejection_scores,
                  const std::vector<bool>& positive) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rejection_scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < rejection_scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (rejection_scores[i] > rejection_scores[j]) {
        wins += 1.0;
      } else if (rejection_scores[i] == rejection_scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

void criterion_oracles(Check& check) {
  std::mt19937_64 rng(424242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kTol = 1e-9;

  for (int trial = 0; trial < 60; ++trial) {
    const double a = unit(rng) + 1e-9;
    const double b = unit(rng) + 1e-9;
    check.require(std::abs(confidence::self_ref_score(a, b).value - b / (a + b)) < kTol,
                  "self_ref_score oracle mismatch");
    check.require(std::abs(confidence::yes_no_score(a, b).value - a / (a + b)) < kTol,
                  "yes_no_score oracle mismatch");

    const std::size_t n = 1 + static_cast<std::size_t>(unit(rng) * 199);
    std::vector<double> probs(n);
    for (double& p : probs) p = unit(rng);
    check.require(
        std::abs(confidence::logits_score(probs, confidence::LogitsKind::free_text).value -
                 oracle_mean(probs)) < kTol,
        "logits_score free_text oracle mismatch");
    const std::vector<double> single{probs[0]};
    check.require(
        confidence::logits_score(single, confidence::LogitsKind::single_token).value ==
            probs[0],
        "logits_score single_token oracle mismatch");

    std::vector<bool> correct(n);
    for (std::size_t i = 0; i < n; ++i) correct[i] = unit(rng) < 0.5;
    check.require(std::abs(calibration::ece(probs, correct, 10) -
                           oracle_ece(probs, correct, 10)) < kTol,
                  "ece oracle mismatch");
    check.require(std::abs(calibration::brier(probs, correct) -
                           oracle_brier(probs, correct)) < kTol,
                  "brier oracle mismatch");
    check.require(
        std::abs(calibration::ce(probs, correct) - oracle_ce(probs, correct)) < kTol,
        "ce oracle mismatch");
  }

  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 10 + static_cast<std::size_t>(unit(rng) * 190);
    std::vector<confidence::ConfidenceScore> scores;
    std::vector<double> rejection_scores;
    std::vector<bool> labels;
    bool has_pos = false;
    bool has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = std::round(unit(rng) * 16.0) / 16.0;  // ties on purpose
      scores.push_back({v, confidence::Method::self_ref});
      rejection_scores.push_back(1.0 - v);
      const bool positive = unit(rng) < 0.5;
      labels.push_back(positive);
      has_pos |= positive;
      has_neg |= !positive;
    }
    if (!has_pos || !has_neg) continue;
    const auto curve = rejection::roc_curve(scores, labels);
    check.require(std::abs(curve.auc - oracle_auc(rejection_scores, labels)) < kTol,
                  "roc AUC oracle mismatch");
    double trapezoid = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      trapezoid += (curve.points[i].fpr - curve.points[i - 1].fpr) *
                   (curve.points[i].tpr + curve.points[i - 1].tpr) / 2.0;
    }
    check.require(std::abs(curve.auc - trapezoid) < 1e-12,
                  "stored AUC disagrees with the trapezoid of its own points");
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: quantile routing exactness.

void criterion_quantiles(Check& check) {
  constexpr std::size_t kN = 1000;
  std::vector<double> scores(kN);
  for (std::size_t i = 0; i < kN; ++i) {
    scores[i] = (static_cast<double>(i) + 0.5) / kN;  // tie-free
  }
  std::mt19937_64 rng(7);
  std::shuffle(scores.begin(), scores.end(), rng);

  const auto thresholds = routing::quantile_thresholds(scores, 20);
  check.require(thresholds.size() == 21, "expected 21 thresholds");
  for (int p = 0; p <= 20; ++p) {
    const auto routed = static_cast<std::size_t>(std::count_if(
        scores.begin(), scores.end(), [&](double s) { return s < thresholds[p]; }));
    check.require(routed == kN * static_cast<std::size_t>(p) / 20,
                  "p=" + std::to_string(p) + " routed " + std::to_string(routed));
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient correctness and masking.

void criterion_gradients(Check& check) {
  using annotator::AugmentedExample;
  using annotator::ConfidenceTag;

  const auto vocab = tinylm::Vocab::from_tokens({"q1", "q2", "q3", "A", "B", "C", "D"});
  for (int trial = 0; trial < 3; ++trial) {
    const int blocks = 1 + trial % 2;
    const auto model = tinylm::add_confidence_tokens(tinylm::TinyModel::init(
        vocab, 8, 12, blocks, RngSeed{static_cast<std::uint64_t>(100 + trial)}));

    AugmentedExample cn;
    cn.query_id = "g";
    cn.prompt = "q1 q2 q3";
    cn.completion_tokens = {"A", annotator::kConfidentToken};
    cn.loss_weights = {1, 1};
    cn.confidence_tag = ConfidenceTag::CN;
    const double err = tinylm::grad_check(model, cn, 1e-4);
    check.require(err < 1e-4, "CN grad_check error " + std::to_string(err));
  }

  // Masked-position sensitivity, probed directly on the logits.
  const auto model = tinylm::add_confidence_tokens(
      tinylm::TinyModel::init(vocab, 8, 12, 2, RngSeed{200}));
  AugmentedExample un;
  un.query_id = "g";
  un.prompt = "q1 q2";
  un.completion_tokens = {"B", "C", "D", annotator::kUnconfidentToken};
  un.loss_weights = {0, 0, 0, 1};
  un.confidence_tag = ConfidenceTag::UN;
  const auto sequence = tinylm::to_masked_sequence(model.vocab, un);

  std::vector<std::vector<double>> logit_rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i + 1 < sequence.tokens.size(); ++i) {
    const std::vector<int> prefix(sequence.tokens.begin(),
                                  sequence.tokens.begin() + static_cast<long>(i) + 1);
    logit_rows.push_back(tinylm::next_token_logits(model, prefix));
    targets.push_back(sequence.tokens[i + 1]);
  }
  const double base =
      tinylm::masked_loss_from_logits(logit_rows, targets, sequence.weights);
  const double epsilon = 1e-4;
  for (std::size_t i = 0; i < sequence.weights.size(); ++i) {
    auto perturbed = logit_rows;
    perturbed[i][targets[i]] += epsilon;
    const double sensitivity =
        std::abs(tinylm::masked_loss_from_logits(perturbed, targets, sequence.weights) -
                 base) /
        epsilon;
    if (sequence.weights[i] == 0.0) {
      check.require(sensitivity <= 1e-10, "masked position leaks gradient");
    } else {
      check.require(sensitivity > 1e-3, "confidence position is insensitive");
    }
  }
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5 share one end-to-end experiment.

synthetic::ExperimentConfig experiment_config() {
  synthetic::ExperimentConfig config;
  config.train_task.n_records = 1500;
  config.train_task.seed = 2024;
  config.test_task.n_records = 500;
  config.test_task.seed = 4048;
  // Evaluation is pure four-choice; training mixes 3/4/5-choice formats so
  // the shorter post-removal prompts stay in distribution.
  config.test_task.three_choice_fraction = 0.0;
  config.test_task.five_choice_fraction = 0.0;
  return config;
}

void criterion_routing_experiment(Check& check,
                                  const synthetic::ExperimentResult& experiment) {
  check.require(experiment.local_accuracy >= 0.55 && experiment.local_accuracy <= 0.80,
                "local accuracy " + std::to_string(experiment.local_accuracy) +
                    " outside [0.55, 0.80]");
  check.note("local accuracy " + std::to_string(experiment.local_accuracy));

  // (a) correctness-prediction AUC of the confidence score.
  std::vector<confidence::ConfidenceScore> scores;
  std::vector<bool> incorrect;
  for (const auto& outcome : experiment.test_outcomes) {
    scores.push_back({outcome.self_ref_score, confidence::Method::self_ref});
    incorrect.push_back(!outcome.correct);
  }
  // With incorrect as the positive class, the rejection-score AUC of (1 - c)
  // equals the probability that a correct answer outranks an incorrect one.
  const double auc = rejection::roc_curve(scores, incorrect).auc;
  check.require(auc >= 0.70, "correctness AUC " + std::to_string(auc) + " < 0.70");
  check.note("correctness AUC " + std::to_string(auc));

  // (b) routing to a perfect oracle remote vs the random baseline.
  std::vector<PredictionRecord> local;
  std::vector<PredictionRecord> remote;
  for (std::size_t i = 0; i < experiment.test.records.size(); ++i) {
    const auto& record = experiment.test.records[i];
    PredictionRecord mine;
    mine.query_id = record.id;
    mine.model_id = "tiny";
    mine.answer = experiment.test_outcomes[i].answer;
    mine.latency_s = 0.01;
    mine.token_count = 1;
    local.push_back(mine);

    PredictionRecord oracle;
    oracle.query_id = record.id;
    oracle.model_id = "oracle";
    oracle.answer = record.ground_truth.text;
    oracle.latency_s = 0.05;
    oracle.token_count = 1;
    remote.push_back(oracle);
  }
  std::vector<double> values;
  for (const auto& s : scores) values.push_back(s.value);
  const auto thresholds = routing::quantile_thresholds(values, 20);
  const auto curve =
      routing::tradeoff_curve(local, remote, scores, experiment.test, thresholds);

  bool window_hit = false;
  double min_margin = 1.0;
  for (const auto& point : curve.points) {
    if (point.routing_rate < 0.3 || point.routing_rate > 0.7) continue;
    window_hit = true;
    const double baseline =
        (1.0 - point.routing_rate) * experiment.local_accuracy + point.routing_rate;
    min_margin = std::min(min_margin, point.accuracy - baseline);
  }
  check.require(window_hit, "no curve points landed in the [0.3, 0.7] window");
  check.require(min_margin >= 0.05,
                "min margin over random routing " + std::to_string(min_margin));
  check.note("min margin in window " + std::to_string(min_margin));
}

void criterion_rejection_experiment(Check& check,
                                    const synthetic::ExperimentResult& experiment) {
  const Dataset rejection_set =
      rejection::build_rejection_set(experiment.test, 0.5, RngSeed{909});
  std::vector<confidence::ConfidenceScore> self_ref;
  std::vector<confidence::ConfidenceScore> logits;
  std::vector<bool> is_reject;
  for (const auto& record : rejection_set.records) {
    const auto outcome = synthetic::evaluate_record(experiment.model, record);
    self_ref.push_back({outcome.self_ref_score, confidence::Method::self_ref});
    logits.push_back({outcome.logits_score, confidence::Method::logits_finetuned});
    is_reject.push_back(record.ground_truth.is_reject());
  }
  const double auc_self_ref = rejection::roc_curve(self_ref, is_reject).auc;
  const double auc_logits = rejection::roc_curve(logits, is_reject).auc;
  check.require(auc_self_ref >= 0.65,
                "rejection AUC " + std::to_string(auc_self_ref) + " < 0.65");
  check.require(auc_self_ref > auc_logits,
                "confidence-token AUC " + std::to_string(auc_self_ref) +
                    " does not beat logits AUC " + std::to_string(auc_logits));
  check.note("rejection AUC " + std::to_string(auc_self_ref) + " vs logits " +
             std::to_string(auc_logits));
}

// ---------------------------------------------------------------------------
// Criterion 6: latency arithmetic.

void criterion_latency(Check& check) {
  // Arrange local/remote/fraction so the mixture reproduces 0.145 exactly.
  const double remote = 0.292;
  const double fraction = 0.39;
  const double local = (0.145 - fraction * remote) / (1.0 - fraction);
  const auto account = routing::latency_account(local, remote, fraction);
  check.require(std::abs(account.mixture_per_token_s - 0.145) < 1e-12,
                "mixture latency drifted");
  check.require(std::abs(account.speedup_vs_remote - remote / 0.145) < 1e-12,
                "speedup is not remote/mixture");
  const double rounded = std::round(account.speedup_vs_remote * 100.0) / 100.0;
  check.require(std::abs(rounded - 2.01) <= 0.001,
                "speedup rounds to " + std::to_string(rounded) + ", not 2.01");
  check.note("speedup " + std::to_string(account.speedup_vs_remote) +
             " (reported elsewhere as 2.03x; our arithmetic gives 0.292/0.145 = 2.0138, "
             "noted, not asserted)");
}

// ---------------------------------------------------------------------------
// Criterion 7: calibration sanity.

void criterion_calibration(Check& check) {
  std::mt19937_64 rng(555);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = 10000;
  std::vector<double> scores(n);
  std::vector<bool> correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = unit(rng);
    correct[i] = unit(rng) < scores[i];
  }
  const double e = calibration::ece(scores, correct);
  check.require(e < 0.02, "ece on calibrated scores " + std::to_string(e));

  const std::vector<double> perfect_scores{1.0, 1.0, 1.0, 1.0};
  const std::vector<bool> perfect_labels{true, true, true, true};
  check.require(calibration::ece(perfect_scores, perfect_labels) == 0.0,
                "perfect ece not zero");
  check.require(calibration::brier(perfect_scores, perfect_labels) == 0.0,
                "perfect brier not zero");
  check.require(calibration::ce(perfect_scores, perfect_labels) <=
                    -std::log(1.0 - 1e-12) + 1e-15,
                "perfect ce above the clamp bound");
}

// ---------------------------------------------------------------------------
// Criterion 8: gateway behavior against mock backends.

mock_backend::Script confident_script() {
  mock_backend::ScriptResponse response;
  response.answer = "B";
  response.token_probs = {0.9};
  response.p_un = 0.1;
  response.p_cn = 0.8;
  response.latency_s = 0.0;
  return mock_backend::Script{{response}, {}, false, {}, 0};
}

void criterion_gateway(Check& check) {
  using gateway::Gateway;
  using gateway::GatewayConfig;

  const auto local = mock_backend::serve_script(confident_script(), "127.0.0.1:0");
  const auto remote = mock_backend::serve_script(confident_script(), "127.0.0.1:0");

  const auto make_config = [&](double threshold) {
    GatewayConfig config;
    config.threshold = threshold;
    config.local = {"local", local->base_url(), 2000, 0};
    config.remote = {"remote", remote->base_url(), 2000, 0};
    config.listen_address = "127.0.0.1:0";
    return config;
  };

  {
    Gateway gw(make_config(0.0));
    for (int i = 0; i < 100; ++i) {
      gw.handle_query({"q" + std::to_string(i), "find 1", ""});
    }
    const auto metrics = gw.metrics_snapshot();
    check.require(metrics.requests_total == 100, "threshold 0: requests_total");
    check.require(metrics.routed_total == 0, "threshold 0: routed_total not 0");
  }
  {
    Gateway gw(make_config(1.5));
    for (int i = 0; i < 100; ++i) {
      gw.handle_query({"q" + std::to_string(i), "find 1", ""});
    }
    const auto metrics = gw.metrics_snapshot();
    check.require(metrics.routed_total == 100, "sentinel: routed_total not 100");
  }
  {
    // 100 concurrent requests, all of which must succeed with exact counters.
    Gateway gw(make_config(0.5));
    std::atomic<int> failures{0};
    std::atomic<int> remote_used{0};
    std::vector<std::thread> workers;
    for (int i = 0; i < 100; ++i) {
      workers.emplace_back([&, i] {
        try {
          const auto response = gw.handle_query({"c" + std::to_string(i), "find 1", ""});
          if (response.model_used == "remote") remote_used.fetch_add(1);
        } catch (...) {
          failures.fetch_add(1);
        }
      });
    }
    for (auto& worker : workers) worker.join();
    const auto metrics = gw.metrics_snapshot();
    check.require(failures.load() == 0, "concurrent requests failed");
    check.require(metrics.requests_total == 100, "concurrent: requests_total");
    check.require(metrics.routed_total ==
                      static_cast<std::uint64_t>(remote_used.load()),
                  "concurrent: routed_total inconsistent");
  }
  {
    int dead_port = 0;
    {
      const auto ephemeral =
          mock_backend::serve_script(confident_script(), "127.0.0.1:0");
      dead_port = ephemeral->port();
    }
    GatewayConfig config = make_config(1.5);
    config.remote = {"remote", "http://127.0.0.1:" + std::to_string(dead_port), 300, 0};
    Gateway gw(config);
    const auto response = gw.handle_query({"d0", "find 1", ""});
    check.require(response.degraded && response.model_used == "local",
                  "degraded fallback did not serve the local answer");
  }
  {
    // Added gateway latency over the raw mock backend, p50 on loopback.
    Gateway gw(make_config(0.0));
    const int port = gw.start();
    httplib::Client direct("127.0.0.1", local->port());
    httplib::Client via_gateway("127.0.0.1", port);
    const auto measure = [](httplib::Client& client, const std::string& path,
                            const std::string& body) {
      std::vector<double> samples;
      for (int i = 0; i < 120; ++i) {
        const auto started = std::chrono::steady_clock::now();
        const auto result = client.Post(path, body, "application/json");
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - started)
                              .count();
        if (result && i >= 20) samples.push_back(ms);  // drop warmup
      }
      std::sort(samples.begin(), samples.end());
      return samples[samples.size() / 2];
    };
    const double p50_direct =
        measure(direct, "/v1/generate", R"({"prompt":"find 1"})");
    const double p50_gateway = measure(
        via_gateway, "/v1/query", R"({"id":"p","prompt":"find 1","choices":null})");
    gw.stop();
    const double added = p50_gateway - p50_direct;
    check.require(added < 5.0, "added p50 latency " + std::to_string(added) + " ms");
    check.note("added p50 latency " + std::to_string(added) + " ms");
  }
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical CLI outputs per seed.

void criterion_determinism(Check& check) {
  testutil::TempDir dir;
  synthetic::TaskConfig task;
  task.n_records = 60;
  task.seed = 31337;
  const Dataset data = synthetic::make_dataset(task, Split::train, "d");
  save_jsonl(data, dir.file("data.jsonl"));

  std::string preds;
  for (const auto& record : data.records) {
    preds += R"({"query_id": ")" + record.id +
             R"(", "model_id": "m", "answer": "A", "token_probs": [0.5], )" +
             R"("p_un": 0.0, "p_cn": 0.0, "latency_s": 0.01, "token_count": 1})" + "\n";
  }
  testutil::write_file(dir.file("preds.jsonl"), preds);

  // annotate
  for (const std::string tag : {"a1", "a2"}) {
    check.require(cli::run({"annotate", "--train", dir.file("data.jsonl"), "--preds",
                            dir.file("preds.jsonl"), "--alpha", "0.7", "--seed", "5",
                            "--out", dir.file(tag + ".jsonl")}) == 0,
                  "annotate run failed");
  }
  check.require(testutil::read_file(dir.file("a1.jsonl")) ==
                    testutil::read_file(dir.file("a2.jsonl")),
                "annotate outputs differ across runs");

  // split via ingest
  for (const std::string tag : {"s1", "s2"}) {
    check.require(cli::run({"ingest", "--in", dir.file("data.jsonl"), "--fractions",
                            "0.7,0.15,0.15", "--seed", "9", "--out-train",
                            dir.file(tag + "_tr"), "--out-val", dir.file(tag + "_va"),
                            "--out-test", dir.file(tag + "_te")}) == 0,
                  "ingest run failed");
  }
  for (const std::string part : {"_tr", "_va", "_te"}) {
    check.require(testutil::read_file(dir.file("s1" + part)) ==
                      testutil::read_file(dir.file("s2" + part)),
                  "split outputs differ across runs");
  }

  // build_rejection_set via eval-reject
  for (const std::string tag : {"r1", "r2"}) {
    check.require(cli::run({"eval-reject", "--make-set", dir.file("data.jsonl"),
                            "--fraction", "0.5", "--seed", "21", "--out-set",
                            dir.file(tag + ".jsonl")}) == 0,
                  "eval-reject run failed");
  }
  check.require(testutil::read_file(dir.file("r1.jsonl")) ==
                    testutil::read_file(dir.file("r2.jsonl")),
                "rejection-set outputs differ across runs");

  // train
  for (const std::string tag : {"m1", "m2"}) {
    check.require(cli::run({"train", "--data", dir.file("data.jsonl"), "--out",
                            dir.file(tag + ".json"), "--width", "8", "--blocks", "1",
                            "--epochs", "1", "--lr", "0.01", "--batch-size", "8",
                            "--max-seq-len", "16", "--seed", "3"}) == 0,
                  "train run failed");
  }
  check.require(testutil::read_file(dir.file("m1.json")) ==
                    testutil::read_file(dir.file("m2.json")),
                "train outputs differ across runs");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    std::function<void(Check&)> body;
  };

  // The experiment backs criteria 4 and 5; run it once.
  synthetic::ExperimentResult experiment;
  bool experiment_ready = false;
  std::string experiment_error;
  double experiment_seconds = 0.0;
  {
    const auto started = std::chrono::steady_clock::now();
    try {
      experiment = synthetic::run_experiment(experiment_config());
      experiment_ready = true;
    } catch (const std::exception& err) {
      experiment_error = err.what();
    }
    experiment_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
  }

  const std::vector<Criterion> criteria{
      {1, "score/metric oracle equivalence", criterion_oracles},
      {2, "quantile routing exactness", criterion_quantiles},
      {3, "gradient correctness and masking", criterion_gradients},
      {4, "end-to-end routing experiment",
       [&](Check& check) {
         check.require(experiment_ready, "experiment failed: " + experiment_error);
         if (experiment_ready) {
           check.require(experiment_seconds < 300.0,
                         "experiment runtime " + std::to_string(experiment_seconds));
           criterion_routing_experiment(check, experiment);
         }
       }},
      {5, "rejection evaluation",
       [&](Check& check) {
         check.require(experiment_ready, "experiment failed: " + experiment_error);
         if (experiment_ready) criterion_rejection_experiment(check, experiment);
       }},
      {6, "latency arithmetic", criterion_latency},
      {7, "calibration sanity", criterion_calibration},
      {8, "gateway behavior", criterion_gateway},
      {9, "seeded determinism", criterion_determinism},
  };

  bool all_ok = true;
  for (const auto& criterion : criteria) {
    Check check;
    const auto started = std::chrono::steady_clock::now();
    try {
      criterion.body(check);
    } catch (const std::exception& err) {
      check.require(false, std::string("exception: ") + err.what());
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    if (criterion.id == 4) seconds += experiment_seconds;
    all_ok &= check.ok;
    std::printf("%s  criterion %d (%s) [%.2fs]%s%s\n", check.ok ? "PASS" : "FAIL",
                criterion.id, criterion.name.c_str(), seconds,
                check.detail.str().empty() ? "" : " — ", check.detail.str().c_str());
  }
  return all_ok ? 0 : 1;
}
