#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crosscue/corpus.hpp"
#include "crosscue/model.hpp"
#include "crosscue/preprocess.hpp"

namespace crosscue {

struct TrainConfig {
  double learning_rate = 1e-3;  // synthetic-corpus default; the fine-tuning
                                // value 1e-5 remains selectable
  int batch_size = 16;
  int max_epochs = 20;
  uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

// Balanced heuristic: w_c = N / (K * n_c), K = 2.
std::map<Label, double> class_weights(const std::map<Label, long long>& counts);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_weighted_f1 = 0.0;
};

struct RunHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // lowest val loss, ties -> earliest
  bool diverged = false;
};

struct Sample {
  std::string id;
  std::vector<int> token_ids;            // for the transformer text encoder
  std::vector<int> lstm_token_ids;       // truncated to lstm_max_len
  std::optional<PixelTensor> image;
  std::optional<Label> weak_label;
  std::optional<Label> gold_label;

  Label train_label() const;  // weak label, falling back to gold
  Label eval_label() const;   // gold label, falling back to weak
};

struct Dataset {
  Vocab vocab;
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;        // text-image posts of test accounts
  std::vector<Sample> text_only;   // the text-only test set
};

// Tokenizes and loads images for all splits; builds the vocabulary from the
// training split only. corpus_dir resolves relative image paths. Posts
// without images are excluded from train/dev/test (the text-image sets) and
// collected into text_only when listed in split.text_only_test_ids.
Dataset build_dataset(const std::vector<Post>& posts, const SplitSpec& split,
                      const ModelConfig& config, const std::string& corpus_dir);

struct TrainResult {
  ModelParams params;  // checkpoint from the best epoch
  RunHistory history;
};

// Deterministic given (dataset, configs, seed): Adam with class-balanced
// cross-entropy, per-epoch dev evaluation, checkpoint at lowest dev loss.
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& train_config);

// Eval-mode predictions for a list of samples.
std::vector<Label> predict_all(const ModelParams& params, const std::vector<Sample>& samples);

// Mean weighted cross-entropy of params over samples (eval mode).
double mean_loss(const ModelParams& params, const std::vector<Sample>& samples,
                 const std::array<double, 2>& weights);

// Per-metric mean and sample standard deviation (n-1) over runs. All runs
// must report the same metric set; requires >= 2 runs.
std::map<std::string, std::pair<double, double>> aggregate_runs(
    const std::vector<std::map<std::string, double>>& runs);

}  // namespace crosscue
