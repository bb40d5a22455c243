#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crosscue/matrix.hpp"
#include "crosscue/preprocess.hpp"
#include "crosscue/rng.hpp"

namespace crosscue {

enum class Fusion { cross_att = 0, concat, text_only, image_only, bilstm_att };

const char* to_string(Fusion f);
std::optional<Fusion> fusion_from_string(std::string_view s);

struct ModelConfig {
  int d = 32;        // hidden size, shared by both encoders (d_k = d_L = d_I)
  int layers = 2;
  int heads = 2;
  int patch_size = 8;
  int image_size = 32;
  int max_seq_len = 128;
  double dropout = 0.05;
  Fusion fusion = Fusion::cross_att;
  int vocab_size = 0;
  int ff_mult = 4;
  // BiLSTM-Att baseline dimensions.
  int lstm_embed = 200;
  int lstm_hidden = 32;
  int lstm_max_len = 50;

  int head_dim() const { return d / heads; }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int image_tokens() const {
    int side = image_size / patch_size;
    return side * side + 1;  // patches + image CLS
  }
  int classifier_in() const;
  void validate() const;  // throws on divisibility violations etc.
};

struct Param {
  Matrix value;
  Matrix grad;
  Param() = default;
  Param(int rows, int cols) : value(rows, cols), grad(rows, cols) {}
};

struct LayerNormParams {
  Param gain;
  Param bias;
};

struct BlockParams {
  Param wq, wk, wv, wo;            // d x d self-attention projections
  Param ff_w1, ff_b1, ff_w2, ff_b2;
  LayerNormParams ln1, ln2;
};

struct StackParams {
  std::vector<BlockParams> blocks;
  LayerNormParams final_ln;
};

struct TextEncoderParams {
  Param embed;  // vocab_size x d; sinusoidal positions carry no weights
  StackParams stack;
};

struct ImageEncoderParams {
  Param proj_w;  // patch_dim x d
  Param proj_b;  // 1 x d
  Param cls;     // 1 x d
  Param pos;     // image_tokens x d (learned)
  StackParams stack;
};

struct CrossAttentionParams {
  Param wq, wk, wv;  // d x d, single head
};

struct BiLstmParams {
  Param embed;                    // vocab_size x lstm_embed
  Param wx_f, wh_f, b_f;          // forward direction, gates stacked [i f g o]
  Param wx_b, wh_b, b_b;          // backward direction
  Param att_w, att_b, att_v;      // additive attention pooling
};

struct ModelParams {
  ModelConfig config;
  std::optional<TextEncoderParams> text;
  std::optional<ImageEncoderParams> image;
  std::optional<CrossAttentionParams> cross;
  std::optional<BiLstmParams> lstm;
  Param cls_w;  // 2 x classifier_in
  Param cls_b;  // 1 x 2

  // Scaled-uniform init (+-1/sqrt(fan_in)), deterministic given seed.
  static ModelParams init(const ModelConfig& config, uint64_t seed);

  void zero_grads();
  // Enumerates (name, param) in a fixed order; used by the optimizer,
  // checkpointing and the gradient checks.
  void for_each(const std::function<void(const std::string&, Param&)>& fn);
  void for_each(const std::function<void(const std::string&, const Param&)>& fn) const;
};

// --- forward-only operations (dropout disabled) ---

// (m_L, d); row 0 is the text CLS. Token ids must lie in [0, vocab_size).
Matrix encode_text(const std::vector<int>& ids, const ModelParams& params);
inline Matrix encode_text(const TokenSeq& seq, const ModelParams& params) {
  return encode_text(seq.ids, params);
}

// (m_I, d); row 0 is the image CLS.
Matrix encode_image(const PixelTensor& px, const ModelParams& params);

// softmax((L Wq^T)(I Wk^T)^T / sqrt(d_k)) (I Wv^T); output (m_L, d_k).
Matrix cross_attention(const Matrix& L, const Matrix& I, const Matrix& wq, const Matrix& wk,
                       const Matrix& wv);

struct Prediction {
  std::array<double, 2> logits{};
  std::array<double, 2> probs{};
};

// cross_att: h = [L[0], crossed[0]]; concat: h = [L[0], I[0]] where the
// second argument is the image encoding. Errors on other fusion modes.
Prediction fuse_and_classify(const Matrix& L, const Matrix& second, const ModelParams& params);

Prediction bilstm_att_forward(const std::vector<int>& ids, const ModelParams& params);

struct ModelInput {
  const std::vector<int>* token_ids = nullptr;
  const PixelTensor* image = nullptr;
};

// Dispatches on config.fusion; eval mode (no dropout), deterministic.
Prediction predict(const ModelParams& params, const ModelInput& input);

struct TrainExample {
  ModelInput input;
  Label label = Label::non_commercial;
};

// Raised when a forward pass produces a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mean weighted cross-entropy over the batch; accumulates parameter
// gradients (caller zeroes them). Dropout is active when dropout_rng is
// non-null and config.dropout > 0. Throws on NaN loss.
double forward_backward(ModelParams& params, const std::vector<TrainExample>& batch,
                        const std::array<double, 2>& class_weights, Rng* dropout_rng = nullptr);

// Self-describing binary checkpoint: config header plus named parameter
// blocks (row-major 64-bit values). Load rejects a config mismatch when
// `expect` is given.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path, const ModelConfig* expect = nullptr);

}  // namespace crosscue
