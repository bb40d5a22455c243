#include "crosscue/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "crosscue/metrics.hpp"
#include "crosscue/rng.hpp"

namespace fs = std::filesystem;

namespace crosscue {

std::map<Label, double> class_weights(const std::map<Label, long long>& counts) {
  long long total = 0;
  for (const auto& [label, count] : counts) {
    if (count <= 0)
      throw std::invalid_argument(std::string("class_weights: zero count for class ") +
                                  to_string(label));
    total += count;
  }
  constexpr double kClasses = 2.0;
  std::map<Label, double> weights;
  for (const auto& [label, count] : counts)
    weights[label] = static_cast<double>(total) / (kClasses * static_cast<double>(count));
  return weights;
}

Label Sample::train_label() const {
  if (weak_label) return *weak_label;
  if (gold_label) return *gold_label;
  throw std::logic_error("sample '" + id + "' has no label");
}

Label Sample::eval_label() const {
  if (gold_label) return *gold_label;
  if (weak_label) return *weak_label;
  throw std::logic_error("sample '" + id + "' has no label");
}

Dataset build_dataset(const std::vector<Post>& posts, const SplitSpec& split,
                      const ModelConfig& config, const std::string& corpus_dir) {
  std::vector<std::string> train_texts;
  for (const auto& post : posts)
    if (split.train_accounts.count(post.account_id)) train_texts.push_back(post.text);

  Dataset data;
  data.vocab = Vocab::build(train_texts);

  auto make_sample = [&](const Post& post, bool with_image) {
    Sample s;
    s.id = post.id;
    std::string normalized = normalize_text(post.text);
    s.token_ids = tokenize(normalized, data.vocab, config.max_seq_len).ids;
    s.lstm_token_ids = tokenize(normalized, data.vocab, config.lstm_max_len).ids;
    s.weak_label = post.weak_label;
    s.gold_label = post.gold_label;
    if (with_image && post.image) {
      Image img;
      try {
        img = load_ppm((fs::path(corpus_dir) / *post.image).string());
      } catch (const std::exception& e) {
        throw std::runtime_error("post '" + post.id + "': " + e.what());
      }
      s.image = prepare_image(img, config.image_size);
    }
    return s;
  };

  for (const auto& post : posts) {
    if (!post.image) {
      if (split.text_only_test_ids.count(post.id)) data.text_only.push_back(make_sample(post, false));
      continue;
    }
    if (split.train_accounts.count(post.account_id))
      data.train.push_back(make_sample(post, true));
    else if (split.dev_accounts.count(post.account_id))
      data.dev.push_back(make_sample(post, true));
    else if (split.test_accounts.count(post.account_id))
      data.test.push_back(make_sample(post, true));
  }
  return data;
}

namespace {

ModelInput input_of(const Sample& s, Fusion fusion) {
  ModelInput in;
  if (fusion == Fusion::bilstm_att)
    in.token_ids = &s.lstm_token_ids;
  else
    in.token_ids = &s.token_ids;
  if (s.image) in.image = &*s.image;
  return in;
}

std::array<double, 2> weights_for(const std::vector<Sample>& train) {
  std::map<Label, long long> counts = {{Label::non_commercial, 0}, {Label::commercial, 0}};
  for (const auto& s : train) ++counts[s.train_label()];
  if (counts[Label::non_commercial] == 0 || counts[Label::commercial] == 0)
    throw std::runtime_error("training split lacks one of the classes");
  auto w = class_weights(counts);
  return {w[Label::non_commercial], w[Label::commercial]};
}

struct Adam {
  double lr, beta1, beta2, eps;
  long long t = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments;  // name -> (m, v)

  void step(ModelParams& params) {
    ++t;
    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.for_each([&](const std::string& name, Param& p) {
      auto it = moments.find(name);
      if (it == moments.end())
        it = moments
                 .emplace(name, std::make_pair(Matrix(p.value.rows(), p.value.cols()),
                                               Matrix(p.value.rows(), p.value.cols())))
                 .first;
      Matrix& m = it->second.first;
      Matrix& v = it->second.second;
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    });
  }
};

}  // namespace

std::vector<Label> predict_all(const ModelParams& params, const std::vector<Sample>& samples) {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Prediction pred = predict(params, input_of(s, params.config.fusion));
    out.push_back(pred.probs[1] > pred.probs[0] ? Label::commercial : Label::non_commercial);
  }
  return out;
}

double mean_loss(const ModelParams& params, const std::vector<Sample>& samples,
                 const std::array<double, 2>& weights) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    Prediction pred = predict(params, input_of(s, params.config.fusion));
    const int y = static_cast<int>(s.train_label());
    const double mx = std::max(pred.logits[0], pred.logits[1]);
    const double lse = mx + std::log(std::exp(pred.logits[0] - mx) + std::exp(pred.logits[1] - mx));
    total += -weights[static_cast<size_t>(y)] * (pred.logits[static_cast<size_t>(y)] - lse);
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train(const Dataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  if (data.train.empty() || data.dev.empty())
    throw std::invalid_argument("train: train and dev splits must be non-empty");

  ModelConfig config = model_config;
  config.vocab_size = data.vocab.size();
  config.validate();

  const std::array<double, 2> weights = weights_for(data.train);

  ModelParams params = ModelParams::init(config, train_config.seed);
  Adam adam{train_config.learning_rate, train_config.adam_beta1, train_config.adam_beta2,
            train_config.adam_eps};
  Rng dropout_rng(Rng(train_config.seed).fork(0xd0u));

  TrainResult result;
  result.history.best_epoch = 0;
  double best_val_loss = 0.0;

  std::vector<size_t> order(data.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng(train_config.seed).fork(0xe0000u + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double train_loss_sum = 0.0;
    long long batches = 0;
    bool diverged = false;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(train_config.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(train_config.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (size_t k = start; k < end; ++k) {
        const Sample& s = data.train[order[k]];
        batch.push_back(TrainExample{input_of(s, config.fusion), s.train_label()});
      }
      params.zero_grads();
      double loss;
      try {
        loss = forward_backward(params, batch, weights, &dropout_rng);
      } catch (const DivergenceError&) {
        diverged = true;
        break;
      }
      adam.step(params);
      train_loss_sum += loss;
      ++batches;
    }
    if (diverged) {
      result.history.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches ? train_loss_sum / static_cast<double>(batches) : 0.0;
    stats.val_loss = mean_loss(params, data.dev, weights);

    std::vector<Label> gold;
    gold.reserve(data.dev.size());
    for (const auto& s : data.dev) gold.push_back(s.train_label());
    stats.val_weighted_f1 = evaluate(gold, predict_all(params, data.dev)).weighted_f1;
    result.history.epochs.push_back(stats);

    if (result.history.best_epoch == 0 || stats.val_loss < best_val_loss) {
      best_val_loss = stats.val_loss;
      result.history.best_epoch = epoch;
      result.params = params;  // checkpoint copy at the best epoch
    }
  }

  if (result.history.best_epoch == 0)
    throw std::runtime_error("train: no epoch completed before divergence");
  return result;
}

std::map<std::string, std::pair<double, double>> aggregate_runs(
    const std::vector<std::map<std::string, double>>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("aggregate_runs: need at least two runs");
  for (const auto& run : runs)
    if (run.size() != runs.front().size() ||
        !std::equal(run.begin(), run.end(), runs.front().begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; }))
      throw std::invalid_argument("aggregate_runs: inconsistent metric sets");

  std::map<std::string, std::pair<double, double>> out;
  const double n = static_cast<double>(runs.size());
  for (const auto& [metric, unused] : runs.front()) {
    (void)unused;
    double mean = 0.0;
    for (const auto& run : runs) mean += run.at(metric);
    mean /= n;
    double ss = 0.0;
    for (const auto& run : runs) {
      const double d = run.at(metric) - mean;
      ss += d * d;
    }
    out[metric] = {mean, std::sqrt(ss / (n - 1.0))};
  }
  return out;
}

}  // namespace crosscue
