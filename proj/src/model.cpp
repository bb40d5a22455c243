#include "crosscue/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>
#include <tuple>

namespace crosscue {

const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::cross_att: return "cross_att";
    case Fusion::concat: return "concat";
    case Fusion::text_only: return "text_only";
    case Fusion::image_only: return "image_only";
    case Fusion::bilstm_att: return "bilstm_att";
  }
  return "cross_att";
}

std::optional<Fusion> fusion_from_string(std::string_view s) {
  for (auto f : {Fusion::cross_att, Fusion::concat, Fusion::text_only, Fusion::image_only,
                 Fusion::bilstm_att})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

int ModelConfig::classifier_in() const {
  switch (fusion) {
    case Fusion::cross_att:
    case Fusion::concat: return 2 * d;
    case Fusion::text_only:
    case Fusion::image_only: return d;
    case Fusion::bilstm_att: return 2 * lstm_hidden;
  }
  return 2 * d;
}

void ModelConfig::validate() const {
  if (d <= 0 || layers <= 0 || heads <= 0) throw std::invalid_argument("model config: non-positive size");
  if (d % heads != 0) throw std::invalid_argument("model config: d must be divisible by heads");
  if (image_size % patch_size != 0)
    throw std::invalid_argument("model config: image_size must be divisible by patch_size");
  if (max_seq_len < 2) throw std::invalid_argument("model config: max_seq_len must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model config: dropout out of range");
  bool needs_vocab = fusion != Fusion::image_only;
  if (needs_vocab && vocab_size < 5)
    throw std::invalid_argument("model config: vocab_size must cover the special tokens");
  if (fusion == Fusion::bilstm_att && (lstm_embed <= 0 || lstm_hidden <= 0 || lstm_max_len < 1))
    throw std::invalid_argument("model config: bad BiLSTM dimensions");
}

namespace {

constexpr double kLnEps = 1e-5;

void uniform_init(Matrix& m, double bound, Rng& rng) {
  for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
}

void init_linear(Param& p, int fan_in, Rng& rng) {
  uniform_init(p.value, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void init_layer_norm(LayerNormParams& ln, int d) {
  ln.gain = Param(1, d);
  ln.bias = Param(1, d);
  ln.gain.value.fill(1.0);
}

void init_stack(StackParams& stack, const ModelConfig& cfg, Rng& rng) {
  stack.blocks.resize(static_cast<size_t>(cfg.layers));
  const int d = cfg.d;
  const int ff = cfg.ff_mult * d;
  for (auto& block : stack.blocks) {
    for (Param* p : {&block.wq, &block.wk, &block.wv, &block.wo}) {
      *p = Param(d, d);
      init_linear(*p, d, rng);
    }
    block.ff_w1 = Param(d, ff);
    init_linear(block.ff_w1, d, rng);
    block.ff_b1 = Param(1, ff);
    block.ff_w2 = Param(ff, d);
    init_linear(block.ff_w2, ff, rng);
    block.ff_b2 = Param(1, d);
    init_layer_norm(block.ln1, d);
    init_layer_norm(block.ln2, d);
  }
  init_layer_norm(stack.final_ln, d);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  Rng rng(seed ^ 0x6d6f64656cULL);

  const bool text_needed = config.fusion == Fusion::cross_att || config.fusion == Fusion::concat ||
                           config.fusion == Fusion::text_only;
  const bool image_needed = config.fusion == Fusion::cross_att || config.fusion == Fusion::concat ||
                            config.fusion == Fusion::image_only;

  if (text_needed) {
    TextEncoderParams text;
    text.embed = Param(config.vocab_size, config.d);
    init_linear(text.embed, config.d, rng);
    init_stack(text.stack, config, rng);
    params.text = std::move(text);
  }
  if (image_needed) {
    ImageEncoderParams image;
    image.proj_w = Param(config.patch_dim(), config.d);
    init_linear(image.proj_w, config.patch_dim(), rng);
    image.proj_b = Param(1, config.d);
    image.cls = Param(1, config.d);
    init_linear(image.cls, config.d, rng);
    image.pos = Param(config.image_tokens(), config.d);
    init_linear(image.pos, config.d, rng);
    init_stack(image.stack, config, rng);
    params.image = std::move(image);
  }
  if (config.fusion == Fusion::cross_att) {
    CrossAttentionParams cross;
    for (Param* p : {&cross.wq, &cross.wk, &cross.wv}) {
      *p = Param(config.d, config.d);
      init_linear(*p, config.d, rng);
    }
    params.cross = std::move(cross);
  }
  if (config.fusion == Fusion::bilstm_att) {
    BiLstmParams lstm;
    lstm.embed = Param(config.vocab_size, config.lstm_embed);
    init_linear(lstm.embed, config.lstm_embed, rng);
    const int h4 = 4 * config.lstm_hidden;
    for (auto [wx, wh, b] : {std::tuple{&lstm.wx_f, &lstm.wh_f, &lstm.b_f},
                             std::tuple{&lstm.wx_b, &lstm.wh_b, &lstm.b_b}}) {
      *wx = Param(h4, config.lstm_embed);
      init_linear(*wx, config.lstm_embed, rng);
      *wh = Param(h4, config.lstm_hidden);
      init_linear(*wh, config.lstm_hidden, rng);
      *b = Param(1, h4);
    }
    const int att = config.lstm_hidden;
    lstm.att_w = Param(att, 2 * config.lstm_hidden);
    init_linear(lstm.att_w, 2 * config.lstm_hidden, rng);
    lstm.att_b = Param(1, att);
    lstm.att_v = Param(1, att);
    init_linear(lstm.att_v, att, rng);
    params.lstm = std::move(lstm);
  }

  params.cls_w = Param(2, config.classifier_in());
  init_linear(params.cls_w, config.classifier_in(), rng);
  params.cls_b = Param(1, 2);
  return params;
}

void ModelParams::for_each(const std::function<void(const std::string&, Param&)>& fn) {
  auto walk_stack = [&](const std::string& prefix, StackParams& stack) {
    for (size_t i = 0; i < stack.blocks.size(); ++i) {
      BlockParams& b = stack.blocks[i];
      std::string base = prefix + ".block" + std::to_string(i) + ".";
      fn(base + "wq", b.wq);
      fn(base + "wk", b.wk);
      fn(base + "wv", b.wv);
      fn(base + "wo", b.wo);
      fn(base + "ff_w1", b.ff_w1);
      fn(base + "ff_b1", b.ff_b1);
      fn(base + "ff_w2", b.ff_w2);
      fn(base + "ff_b2", b.ff_b2);
      fn(base + "ln1.gain", b.ln1.gain);
      fn(base + "ln1.bias", b.ln1.bias);
      fn(base + "ln2.gain", b.ln2.gain);
      fn(base + "ln2.bias", b.ln2.bias);
    }
    fn(prefix + ".final_ln.gain", stack.final_ln.gain);
    fn(prefix + ".final_ln.bias", stack.final_ln.bias);
  };
  if (text) {
    fn("text.embed", text->embed);
    walk_stack("text", text->stack);
  }
  if (image) {
    fn("image.proj_w", image->proj_w);
    fn("image.proj_b", image->proj_b);
    fn("image.cls", image->cls);
    fn("image.pos", image->pos);
    walk_stack("image", image->stack);
  }
  if (cross) {
    fn("cross.wq", cross->wq);
    fn("cross.wk", cross->wk);
    fn("cross.wv", cross->wv);
  }
  if (lstm) {
    fn("lstm.embed", lstm->embed);
    fn("lstm.wx_f", lstm->wx_f);
    fn("lstm.wh_f", lstm->wh_f);
    fn("lstm.b_f", lstm->b_f);
    fn("lstm.wx_b", lstm->wx_b);
    fn("lstm.wh_b", lstm->wh_b);
    fn("lstm.b_b", lstm->b_b);
    fn("lstm.att_w", lstm->att_w);
    fn("lstm.att_b", lstm->att_b);
    fn("lstm.att_v", lstm->att_v);
  }
  fn("cls.w", cls_w);
  fn("cls.b", cls_b);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Param&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&fn](const std::string& name, Param& p) { fn(name, p); });
}

void ModelParams::zero_grads() {
  for_each([](const std::string&, Param& p) { p.grad.set_zero(); });
}

// ---------------------------------------------------------------------------
// forward/backward machinery
// ---------------------------------------------------------------------------

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// dS = P .* (dP - rowsum(dP .* P)) for row-wise softmax P.
Matrix softmax_backward(const Matrix& d_probs, const Matrix& probs) {
  Matrix out(probs.rows(), probs.cols());
  for (int r = 0; r < probs.rows(); ++r) {
    double dot = 0.0;
    for (int c = 0; c < probs.cols(); ++c) dot += d_probs(r, c) * probs(r, c);
    for (int c = 0; c < probs.cols(); ++c) out(r, c) = probs(r, c) * (d_probs(r, c) - dot);
  }
  return out;
}

struct LayerNormTape {
  Matrix normed;              // x_hat
  std::vector<double> inv_sd; // per row
};

Matrix layer_norm_forward(const Matrix& x, const LayerNormParams& ln, LayerNormTape& tape) {
  const int m = x.rows(), d = x.cols();
  tape.normed = Matrix(m, d);
  tape.inv_sd.resize(static_cast<size_t>(m));
  Matrix y(m, d);
  for (int r = 0; r < m; ++r) {
    const double* row = x.row(r);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += row[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= d;
    const double inv_sd = 1.0 / std::sqrt(var + kLnEps);
    tape.inv_sd[static_cast<size_t>(r)] = inv_sd;
    for (int c = 0; c < d; ++c) {
      double normed = (row[c] - mean) * inv_sd;
      tape.normed(r, c) = normed;
      y(r, c) = normed * ln.gain.value(0, c) + ln.bias.value(0, c);
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormTape& tape, LayerNormParams& ln) {
  const int m = dy.rows(), d = dy.cols();
  Matrix dx(m, d);
  for (int r = 0; r < m; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int c = 0; c < d; ++c) {
      const double g = dy(r, c);
      ln.gain.grad(0, c) += g * tape.normed(r, c);
      ln.bias.grad(0, c) += g;
      const double dxhat = g * ln.gain.value(0, c);
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * tape.normed(r, c);
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    const double inv_sd = tape.inv_sd[static_cast<size_t>(r)];
    for (int c = 0; c < d; ++c) {
      const double dxhat = dy(r, c) * ln.gain.value(0, c);
      dx(r, c) = inv_sd * (dxhat - mean_dxhat - tape.normed(r, c) * mean_dxhat_xhat);
    }
  }
  return dx;
}

// Inverted dropout; mask kept for backward.
Matrix dropout_forward(const Matrix& x, double rate, Rng* rng, Matrix* mask_out) {
  if (rng == nullptr || rate <= 0.0) {
    if (mask_out) *mask_out = Matrix();
    return x;
  }
  Matrix mask(x.rows(), x.cols());
  Matrix y(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < x.size(); ++i) {
    double m = rng->bernoulli(rate) ? 0.0 : keep_scale;
    mask[i] = m;
    y[i] = x[i] * m;
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
  if (mask.empty()) return dy;
  Matrix dx(dy.rows(), dy.cols());
  for (size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

Matrix col_slice(const Matrix& m, int first, int count) {
  Matrix out(m.rows(), count);
  for (int r = 0; r < m.rows(); ++r)
    std::memcpy(out.row(r), m.row(r) + first, static_cast<size_t>(count) * sizeof(double));
  return out;
}

void add_col_slice(Matrix& dst, const Matrix& src, int first) {
  for (int r = 0; r < src.rows(); ++r) {
    double* d = dst.row(r) + first;
    const double* s = src.row(r);
    for (int c = 0; c < src.cols(); ++c) d[c] += s[c];
  }
}

struct AttentionTape {
  Matrix input;               // N, the block's normed input
  Matrix q, k, v;             // m x d
  std::vector<Matrix> probs;  // per head, m x m
  Matrix concat;              // m x d, pre output-projection
};

Matrix self_attention_forward(const Matrix& n, const BlockParams& block, int heads,
                              AttentionTape& tape) {
  const int m = n.rows(), d = n.cols();
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  tape.input = n;
  tape.q = matmul(n, block.wq.value);
  tape.k = matmul(n, block.wk.value);
  tape.v = matmul(n, block.wv.value);
  tape.probs.resize(static_cast<size_t>(heads));
  tape.concat = Matrix(m, d);
  for (int h = 0; h < heads; ++h) {
    Matrix qh = col_slice(tape.q, h * hd, hd);
    Matrix kh = col_slice(tape.k, h * hd, hd);
    Matrix vh = col_slice(tape.v, h * hd, hd);
    Matrix scores = matmul_nt(qh, kh);
    scale_inplace(scores, scale);
    softmax_rows(scores);
    tape.probs[static_cast<size_t>(h)] = scores;
    Matrix oh = matmul(scores, vh);
    for (int r = 0; r < m; ++r)
      std::memcpy(tape.concat.row(r) + h * hd, oh.row(r), static_cast<size_t>(hd) * sizeof(double));
  }
  return matmul(tape.concat, block.wo.value);
}

Matrix self_attention_backward(const Matrix& d_out, const AttentionTape& tape, BlockParams& block,
                               int heads) {
  const int m = tape.input.rows(), d = tape.input.cols();
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  add_matmul_tn(block.wo.grad, tape.concat, d_out);
  Matrix d_concat = matmul_nt(d_out, block.wo.value);

  Matrix dq(m, d), dk(m, d), dv(m, d);
  for (int h = 0; h < heads; ++h) {
    Matrix d_oh = col_slice(d_concat, h * hd, hd);
    Matrix qh = col_slice(tape.q, h * hd, hd);
    Matrix kh = col_slice(tape.k, h * hd, hd);
    Matrix vh = col_slice(tape.v, h * hd, hd);
    const Matrix& probs = tape.probs[static_cast<size_t>(h)];

    Matrix d_probs = matmul_nt(d_oh, vh);
    Matrix d_vh = matmul_tn(probs, d_oh);
    Matrix d_scores = softmax_backward(d_probs, probs);
    scale_inplace(d_scores, scale);
    Matrix d_qh = matmul(d_scores, kh);
    Matrix d_kh = matmul_tn(d_scores, qh);

    add_col_slice(dq, d_qh, h * hd);
    add_col_slice(dk, d_kh, h * hd);
    add_col_slice(dv, d_vh, h * hd);
  }

  add_matmul_tn(block.wq.grad, tape.input, dq);
  add_matmul_tn(block.wk.grad, tape.input, dk);
  add_matmul_tn(block.wv.grad, tape.input, dv);

  Matrix dn = matmul_nt(dq, block.wq.value);
  add_matmul_nt(dn, dk, block.wk.value);
  add_matmul_nt(dn, dv, block.wv.value);
  return dn;
}

struct FeedForwardTape {
  Matrix input;   // n2
  Matrix pre;     // n2*W1 + b1
  Matrix act;     // gelu(pre)
};

Matrix feed_forward_forward(const Matrix& n2, const BlockParams& block, FeedForwardTape& tape) {
  tape.input = n2;
  tape.pre = matmul(n2, block.ff_w1.value);
  for (int r = 0; r < tape.pre.rows(); ++r)
    for (int c = 0; c < tape.pre.cols(); ++c) tape.pre(r, c) += block.ff_b1.value(0, c);
  tape.act = Matrix(tape.pre.rows(), tape.pre.cols());
  for (size_t i = 0; i < tape.pre.size(); ++i) tape.act[i] = gelu(tape.pre[i]);
  Matrix out = matmul(tape.act, block.ff_w2.value);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) += block.ff_b2.value(0, c);
  return out;
}

Matrix feed_forward_backward(const Matrix& d_out, const FeedForwardTape& tape, BlockParams& block) {
  for (int r = 0; r < d_out.rows(); ++r)
    for (int c = 0; c < d_out.cols(); ++c) block.ff_b2.grad(0, c) += d_out(r, c);
  add_matmul_tn(block.ff_w2.grad, tape.act, d_out);
  Matrix d_act = matmul_nt(d_out, block.ff_w2.value);
  Matrix d_pre(d_act.rows(), d_act.cols());
  for (size_t i = 0; i < d_act.size(); ++i) d_pre[i] = d_act[i] * gelu_grad(tape.pre[i]);
  for (int r = 0; r < d_pre.rows(); ++r)
    for (int c = 0; c < d_pre.cols(); ++c) block.ff_b1.grad(0, c) += d_pre(r, c);
  add_matmul_tn(block.ff_w1.grad, tape.input, d_pre);
  return matmul_nt(d_pre, block.ff_w1.value);
}

struct BlockTape {
  LayerNormTape ln1, ln2;
  AttentionTape attn;
  FeedForwardTape ff;
  Matrix attn_mask, ff_mask;  // dropout masks (empty in eval mode)
};

struct StackTape {
  std::vector<BlockTape> blocks;
  LayerNormTape final_ln;
};

Matrix stack_forward(Matrix x, const StackParams& stack, const ModelConfig& cfg, StackTape& tape,
                     Rng* dropout_rng) {
  tape.blocks.resize(stack.blocks.size());
  for (size_t i = 0; i < stack.blocks.size(); ++i) {
    const BlockParams& block = stack.blocks[i];
    BlockTape& bt = tape.blocks[i];
    Matrix n1 = layer_norm_forward(x, block.ln1, bt.ln1);
    Matrix attn = self_attention_forward(n1, block, cfg.heads, bt.attn);
    attn = dropout_forward(attn, cfg.dropout, dropout_rng, &bt.attn_mask);
    add_inplace(x, attn);
    Matrix n2 = layer_norm_forward(x, block.ln2, bt.ln2);
    Matrix ff = feed_forward_forward(n2, block, bt.ff);
    ff = dropout_forward(ff, cfg.dropout, dropout_rng, &bt.ff_mask);
    add_inplace(x, ff);
  }
  return layer_norm_forward(x, stack.final_ln, tape.final_ln);
}

Matrix stack_backward(Matrix dy, StackTape& tape, StackParams& stack, const ModelConfig& cfg) {
  Matrix dx = layer_norm_backward(dy, tape.final_ln, stack.final_ln);
  for (size_t idx = stack.blocks.size(); idx-- > 0;) {
    BlockParams& block = stack.blocks[idx];
    BlockTape& bt = tape.blocks[idx];
    Matrix d_ff = dropout_backward(dx, bt.ff_mask);
    Matrix d_n2 = feed_forward_backward(d_ff, bt.ff, block);
    add_inplace(dx, layer_norm_backward(d_n2, bt.ln2, block.ln2));
    Matrix d_attn = dropout_backward(dx, bt.attn_mask);
    Matrix d_n1 = self_attention_backward(d_attn, bt.attn, block, cfg.heads);
    add_inplace(dx, layer_norm_backward(d_n1, bt.ln1, block.ln1));
  }
  return dx;
}

Matrix sinusoidal_positions(int m, int d) {
  Matrix pe(m, d);
  for (int p = 0; p < m; ++p) {
    for (int i = 0; i < d; i += 2) {
      double rate = std::pow(10000.0, -static_cast<double>(i) / d);
      pe(p, i) = std::sin(p * rate);
      if (i + 1 < d) pe(p, i + 1) = std::cos(p * rate);
    }
  }
  return pe;
}

struct TextTape {
  std::vector<int> ids;
  StackTape stack;
};

Matrix text_forward(const std::vector<int>& ids, const ModelParams& params, TextTape& tape,
                    Rng* dropout_rng) {
  if (ids.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  const TextEncoderParams& text = *params.text;
  const int d = params.config.d;
  const int m = static_cast<int>(ids.size());
  Matrix x(m, d);
  for (int r = 0; r < m; ++r) {
    int id = ids[static_cast<size_t>(r)];
    if (id < 0 || id >= text.embed.value.rows())
      throw std::out_of_range("encode_text: token id " + std::to_string(id) + " out of range");
    std::memcpy(x.row(r), text.embed.value.row(id), static_cast<size_t>(d) * sizeof(double));
  }
  add_inplace(x, sinusoidal_positions(m, d));
  tape.ids = ids;
  return stack_forward(std::move(x), text.stack, params.config, tape.stack, dropout_rng);
}

void text_backward(const Matrix& dy, TextTape& tape, ModelParams& params) {
  TextEncoderParams& text = *params.text;
  Matrix dx = stack_backward(dy, tape.stack, text.stack, params.config);
  for (int r = 0; r < dx.rows(); ++r) {
    double* grad_row = text.embed.grad.row(tape.ids[static_cast<size_t>(r)]);
    const double* src = dx.row(r);
    for (int c = 0; c < dx.cols(); ++c) grad_row[c] += src[c];
  }
}

struct ImageTape {
  Matrix patches;  // num_patches x patch_dim
  StackTape stack;
};

Matrix patchify(const PixelTensor& px, const ModelConfig& cfg) {
  if (px.size != cfg.image_size)
    throw std::invalid_argument("encode_image: image size " + std::to_string(px.size) +
                                " does not match config " + std::to_string(cfg.image_size));
  const int side = cfg.image_size / cfg.patch_size;
  const int ps = cfg.patch_size;
  Matrix patches(side * side, cfg.patch_dim());
  for (int py = 0; py < side; ++py)
    for (int px_i = 0; px_i < side; ++px_i) {
      double* row = patches.row(py * side + px_i);
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x) row[k++] = px.at(c, py * ps + y, px_i * ps + x);
    }
  return patches;
}

Matrix image_forward(const PixelTensor& px, const ModelParams& params, ImageTape& tape,
                     Rng* dropout_rng) {
  const ImageEncoderParams& image = *params.image;
  const ModelConfig& cfg = params.config;
  tape.patches = patchify(px, cfg);
  Matrix projected = matmul(tape.patches, image.proj_w.value);
  const int m = cfg.image_tokens();
  Matrix x(m, cfg.d);
  std::memcpy(x.row(0), image.cls.value.row(0), static_cast<size_t>(cfg.d) * sizeof(double));
  for (int r = 1; r < m; ++r) {
    double* dst = x.row(r);
    const double* src = projected.row(r - 1);
    for (int c = 0; c < cfg.d; ++c) dst[c] = src[c] + image.proj_b.value(0, c);
  }
  add_inplace(x, image.pos.value);
  return stack_forward(std::move(x), image.stack, cfg, tape.stack, dropout_rng);
}

void image_backward(const Matrix& dy, ImageTape& tape, ModelParams& params) {
  ImageEncoderParams& image = *params.image;
  Matrix dx = stack_backward(dy, tape.stack, image.stack, params.config);
  add_inplace(image.pos.grad, dx);
  for (int c = 0; c < dx.cols(); ++c) image.cls.grad(0, c) += dx(0, c);
  Matrix d_proj(dx.rows() - 1, dx.cols());
  for (int r = 1; r < dx.rows(); ++r) {
    std::memcpy(d_proj.row(r - 1), dx.row(r), static_cast<size_t>(dx.cols()) * sizeof(double));
    for (int c = 0; c < dx.cols(); ++c) image.proj_b.grad(0, c) += dx(r, c);
  }
  add_matmul_tn(image.proj_w.grad, tape.patches, d_proj);
}

struct CrossTape {
  Matrix l, i;        // encoder outputs
  Matrix q, k, v;     // projected
  Matrix probs;       // m_L x m_I
};

Matrix cross_forward(const Matrix& L, const Matrix& I, const CrossAttentionParams& cross,
                     CrossTape& tape) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(L.cols()));
  tape.l = L;
  tape.i = I;
  tape.q = matmul_nt(L, cross.wq.value);
  tape.k = matmul_nt(I, cross.wk.value);
  tape.v = matmul_nt(I, cross.wv.value);
  Matrix scores = matmul_nt(tape.q, tape.k);
  scale_inplace(scores, scale);
  softmax_rows(scores);
  tape.probs = scores;
  return matmul(tape.probs, tape.v);
}

// Returns dL; accumulates dI into d_image.
Matrix cross_backward(const Matrix& d_out, const CrossTape& tape, CrossAttentionParams& cross,
                      Matrix& d_image) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(tape.l.cols()));
  Matrix d_probs = matmul_nt(d_out, tape.v);
  Matrix d_v = matmul_tn(tape.probs, d_out);
  Matrix d_scores = softmax_backward(d_probs, tape.probs);
  scale_inplace(d_scores, scale);
  Matrix d_q = matmul(d_scores, tape.k);
  Matrix d_k = matmul_tn(d_scores, tape.q);

  // q = L * wq^T  =>  dL = dq * wq, dwq = dq^T * L
  add_matmul_tn(cross.wq.grad, d_q, tape.l);
  add_matmul_tn(cross.wk.grad, d_k, tape.i);
  add_matmul_tn(cross.wv.grad, d_v, tape.i);
  Matrix d_l = matmul(d_q, cross.wq.value);
  add_matmul(d_image, d_k, cross.wk.value);
  add_matmul(d_image, d_v, cross.wv.value);
  return d_l;
}

// --- BiLSTM-Att ---

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmStepTape {
  std::vector<double> i, f, g, o, c, tanh_c, h_prev, c_prev;
};

struct LstmDirTape {
  std::vector<LstmStepTape> steps;  // in input order for fwd, reversed for bwd
};

struct BiLstmTape {
  std::vector<int> ids;
  Matrix inputs;   // m x embed
  LstmDirTape fwd, bwd;
  Matrix hidden;   // m x 2H
  Matrix att_pre_tanh;  // m x A (e_t before tanh is not needed; store tanh)
  Matrix att_e;    // m x A, tanh(...)
  std::vector<double> att_weights;  // m
  std::vector<bool> masked;
  std::vector<double> context;      // 2H
};

void lstm_direction_forward(const Matrix& inputs, const Param& wx, const Param& wh, const Param& b,
                            int hidden, bool reverse, LstmDirTape& tape, Matrix& h_out,
                            int col_offset) {
  const int m = inputs.rows();
  const int h4 = 4 * hidden;
  tape.steps.resize(static_cast<size_t>(m));
  std::vector<double> h(static_cast<size_t>(hidden), 0.0), c(static_cast<size_t>(hidden), 0.0);
  for (int step = 0; step < m; ++step) {
    const int t = reverse ? m - 1 - step : step;
    LstmStepTape& st = tape.steps[static_cast<size_t>(step)];
    st.h_prev = h;
    st.c_prev = c;
    std::vector<double> z(static_cast<size_t>(h4), 0.0);
    const double* x = inputs.row(t);
    for (int j = 0; j < h4; ++j) {
      double acc = b.value(0, j);
      const double* wx_row = wx.value.row(j);
      for (int k = 0; k < inputs.cols(); ++k) acc += wx_row[k] * x[k];
      const double* wh_row = wh.value.row(j);
      for (int k = 0; k < hidden; ++k) acc += wh_row[k] * h[static_cast<size_t>(k)];
      z[static_cast<size_t>(j)] = acc;
    }
    st.i.resize(static_cast<size_t>(hidden));
    st.f.resize(static_cast<size_t>(hidden));
    st.g.resize(static_cast<size_t>(hidden));
    st.o.resize(static_cast<size_t>(hidden));
    st.c.resize(static_cast<size_t>(hidden));
    st.tanh_c.resize(static_cast<size_t>(hidden));
    for (int k = 0; k < hidden; ++k) {
      st.i[static_cast<size_t>(k)] = sigmoid(z[static_cast<size_t>(k)]);
      st.f[static_cast<size_t>(k)] = sigmoid(z[static_cast<size_t>(hidden + k)]);
      st.g[static_cast<size_t>(k)] = std::tanh(z[static_cast<size_t>(2 * hidden + k)]);
      st.o[static_cast<size_t>(k)] = sigmoid(z[static_cast<size_t>(3 * hidden + k)]);
      c[static_cast<size_t>(k)] = st.f[static_cast<size_t>(k)] * st.c_prev[static_cast<size_t>(k)] +
                                  st.i[static_cast<size_t>(k)] * st.g[static_cast<size_t>(k)];
      st.c[static_cast<size_t>(k)] = c[static_cast<size_t>(k)];
      st.tanh_c[static_cast<size_t>(k)] = std::tanh(c[static_cast<size_t>(k)]);
      h[static_cast<size_t>(k)] = st.o[static_cast<size_t>(k)] * st.tanh_c[static_cast<size_t>(k)];
      h_out(t, col_offset + k) = h[static_cast<size_t>(k)];
    }
  }
}

void lstm_direction_backward(const Matrix& d_hidden, const Matrix& inputs, Matrix& d_inputs,
                             Param& wx, Param& wh, Param& b, int hidden, bool reverse,
                             const LstmDirTape& tape, int col_offset) {
  const int m = inputs.rows();
  const int h4 = 4 * hidden;
  std::vector<double> dh_next(static_cast<size_t>(hidden), 0.0);
  std::vector<double> dc_next(static_cast<size_t>(hidden), 0.0);
  for (int step = m - 1; step >= 0; --step) {
    const int t = reverse ? m - 1 - step : step;
    const LstmStepTape& st = tape.steps[static_cast<size_t>(step)];
    std::vector<double> dz(static_cast<size_t>(h4), 0.0);
    for (int k = 0; k < hidden; ++k) {
      double dh = d_hidden(t, col_offset + k) + dh_next[static_cast<size_t>(k)];
      const double o = st.o[static_cast<size_t>(k)];
      const double tc = st.tanh_c[static_cast<size_t>(k)];
      double dc = dc_next[static_cast<size_t>(k)] + dh * o * (1.0 - tc * tc);
      const double i = st.i[static_cast<size_t>(k)];
      const double f = st.f[static_cast<size_t>(k)];
      const double g = st.g[static_cast<size_t>(k)];
      dz[static_cast<size_t>(k)] = dc * g * i * (1.0 - i);
      dz[static_cast<size_t>(hidden + k)] = dc * st.c_prev[static_cast<size_t>(k)] * f * (1.0 - f);
      dz[static_cast<size_t>(2 * hidden + k)] = dc * i * (1.0 - g * g);
      dz[static_cast<size_t>(3 * hidden + k)] = dh * tc * o * (1.0 - o);
      dc_next[static_cast<size_t>(k)] = dc * f;
    }
    const double* x = inputs.row(t);
    double* dx = d_inputs.row(t);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (int j = 0; j < h4; ++j) {
      const double dzj = dz[static_cast<size_t>(j)];
      if (dzj == 0.0) continue;
      b.grad(0, j) += dzj;
      double* wx_grad = wx.grad.row(j);
      const double* wx_row = wx.value.row(j);
      for (int k = 0; k < inputs.cols(); ++k) {
        wx_grad[k] += dzj * x[k];
        dx[k] += dzj * wx_row[k];
      }
      double* wh_grad = wh.grad.row(j);
      const double* wh_row = wh.value.row(j);
      for (int k = 0; k < hidden; ++k) {
        wh_grad[k] += dzj * st.h_prev[static_cast<size_t>(k)];
        dh_next[static_cast<size_t>(k)] += dzj * wh_row[k];
      }
    }
  }
}

std::vector<double> bilstm_forward(const std::vector<int>& ids, const ModelParams& params,
                                   BiLstmTape& tape) {
  const BiLstmParams& lstm = *params.lstm;
  const ModelConfig& cfg = params.config;
  const int hidden = cfg.lstm_hidden;
  std::vector<int> use(ids.begin(),
                       ids.begin() + std::min<size_t>(ids.size(), static_cast<size_t>(cfg.lstm_max_len)));
  if (use.empty()) throw std::invalid_argument("bilstm_att_forward: empty token sequence");
  const int m = static_cast<int>(use.size());
  tape.ids = use;
  tape.inputs = Matrix(m, cfg.lstm_embed);
  for (int t = 0; t < m; ++t) {
    int id = use[static_cast<size_t>(t)];
    if (id < 0 || id >= lstm.embed.value.rows())
      throw std::out_of_range("bilstm_att_forward: token id out of range");
    std::memcpy(tape.inputs.row(t), lstm.embed.value.row(id),
                static_cast<size_t>(cfg.lstm_embed) * sizeof(double));
  }

  tape.hidden = Matrix(m, 2 * hidden);
  lstm_direction_forward(tape.inputs, lstm.wx_f, lstm.wh_f, lstm.b_f, hidden, false, tape.fwd,
                         tape.hidden, 0);
  lstm_direction_forward(tape.inputs, lstm.wx_b, lstm.wh_b, lstm.b_b, hidden, true, tape.bwd,
                         tape.hidden, hidden);

  // Additive attention pooling with exact-zero weight on PAD positions.
  const int att = lstm.att_v.value.cols();
  tape.att_e = Matrix(m, att);
  tape.masked.assign(static_cast<size_t>(m), false);
  std::vector<double> scores(static_cast<size_t>(m), 0.0);
  bool any_unmasked = false;
  for (int t = 0; t < m; ++t) {
    tape.masked[static_cast<size_t>(t)] = use[static_cast<size_t>(t)] == Vocab::kPad;
    any_unmasked = any_unmasked || !tape.masked[static_cast<size_t>(t)];
  }
  for (int t = 0; t < m; ++t) {
    double score = 0.0;
    for (int a = 0; a < att; ++a) {
      double pre = lstm.att_b.value(0, a);
      const double* w_row = lstm.att_w.value.row(a);
      const double* h_row = tape.hidden.row(t);
      for (int k = 0; k < 2 * hidden; ++k) pre += w_row[k] * h_row[k];
      double e = std::tanh(pre);
      tape.att_e(t, a) = e;
      score += e * lstm.att_v.value(0, a);
    }
    scores[static_cast<size_t>(t)] = score;
  }
  // If every position is PAD, fall back to uniform over all of them.
  if (!any_unmasked) tape.masked.assign(static_cast<size_t>(m), false);

  double mx = -1e300;
  for (int t = 0; t < m; ++t)
    if (!tape.masked[static_cast<size_t>(t)]) mx = std::max(mx, scores[static_cast<size_t>(t)]);
  double sum = 0.0;
  tape.att_weights.assign(static_cast<size_t>(m), 0.0);
  for (int t = 0; t < m; ++t) {
    if (tape.masked[static_cast<size_t>(t)]) continue;
    double w = std::exp(scores[static_cast<size_t>(t)] - mx);
    tape.att_weights[static_cast<size_t>(t)] = w;
    sum += w;
  }
  for (int t = 0; t < m; ++t) tape.att_weights[static_cast<size_t>(t)] /= sum;

  tape.context.assign(static_cast<size_t>(2 * hidden), 0.0);
  for (int t = 0; t < m; ++t) {
    const double w = tape.att_weights[static_cast<size_t>(t)];
    if (w == 0.0) continue;
    const double* h_row = tape.hidden.row(t);
    for (int k = 0; k < 2 * hidden; ++k) tape.context[static_cast<size_t>(k)] += w * h_row[k];
  }
  return tape.context;
}

void bilstm_backward(const std::vector<double>& d_context, BiLstmTape& tape, ModelParams& params) {
  BiLstmParams& lstm = *params.lstm;
  const ModelConfig& cfg = params.config;
  const int hidden = cfg.lstm_hidden;
  const int m = tape.hidden.rows();
  const int att = lstm.att_v.value.cols();

  // context = sum_t alpha_t h_t
  std::vector<double> d_alpha(static_cast<size_t>(m), 0.0);
  Matrix d_hidden(m, 2 * hidden);
  for (int t = 0; t < m; ++t) {
    const double* h_row = tape.hidden.row(t);
    double acc = 0.0;
    for (int k = 0; k < 2 * hidden; ++k) acc += d_context[static_cast<size_t>(k)] * h_row[k];
    d_alpha[static_cast<size_t>(t)] = acc;
    double* dh = d_hidden.row(t);
    const double w = tape.att_weights[static_cast<size_t>(t)];
    for (int k = 0; k < 2 * hidden; ++k) dh[k] = w * d_context[static_cast<size_t>(k)];
  }

  // softmax over unmasked scores
  double dot = 0.0;
  for (int t = 0; t < m; ++t) dot += d_alpha[static_cast<size_t>(t)] * tape.att_weights[static_cast<size_t>(t)];
  std::vector<double> d_score(static_cast<size_t>(m), 0.0);
  for (int t = 0; t < m; ++t) {
    const double w = tape.att_weights[static_cast<size_t>(t)];
    if (w == 0.0) continue;  // masked or zero-weight position
    d_score[static_cast<size_t>(t)] = w * (d_alpha[static_cast<size_t>(t)] - dot);
  }

  for (int t = 0; t < m; ++t) {
    const double ds = d_score[static_cast<size_t>(t)];
    if (ds == 0.0) continue;
    const double* h_row = tape.hidden.row(t);
    double* dh = d_hidden.row(t);
    for (int a = 0; a < att; ++a) {
      const double e = tape.att_e(t, a);
      lstm.att_v.grad(0, a) += ds * e;
      const double d_pre = ds * lstm.att_v.value(0, a) * (1.0 - e * e);
      lstm.att_b.grad(0, a) += d_pre;
      double* w_grad = lstm.att_w.grad.row(a);
      const double* w_row = lstm.att_w.value.row(a);
      for (int k = 0; k < 2 * hidden; ++k) {
        w_grad[k] += d_pre * h_row[k];
        dh[k] += d_pre * w_row[k];
      }
    }
  }

  Matrix d_inputs(m, cfg.lstm_embed);
  lstm_direction_backward(d_hidden, tape.inputs, d_inputs, lstm.wx_f, lstm.wh_f, lstm.b_f, hidden,
                          false, tape.fwd, 0);
  lstm_direction_backward(d_hidden, tape.inputs, d_inputs, lstm.wx_b, lstm.wh_b, lstm.b_b, hidden,
                          true, tape.bwd, hidden);
  for (int t = 0; t < m; ++t) {
    double* grad_row = lstm.embed.grad.row(tape.ids[static_cast<size_t>(t)]);
    const double* src = d_inputs.row(t);
    for (int k = 0; k < cfg.lstm_embed; ++k) grad_row[k] += src[k];
  }
}

// --- classifier head ---

Prediction classify(const std::vector<double>& h, const ModelParams& params) {
  Prediction pred;
  for (int j = 0; j < 2; ++j) {
    double z = params.cls_b.value(0, j);
    const double* w = params.cls_w.value.row(j);
    for (size_t k = 0; k < h.size(); ++k) z += w[k] * h[k];
    pred.logits[static_cast<size_t>(j)] = z;
  }
  double mx = std::max(pred.logits[0], pred.logits[1]);
  double e0 = std::exp(pred.logits[0] - mx);
  double e1 = std::exp(pred.logits[1] - mx);
  pred.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
  return pred;
}

// dz -> dh, accumulating classifier grads.
std::vector<double> classify_backward(const std::array<double, 2>& dz, const std::vector<double>& h,
                                      ModelParams& params) {
  std::vector<double> dh(h.size(), 0.0);
  for (int j = 0; j < 2; ++j) {
    params.cls_b.grad(0, j) += dz[static_cast<size_t>(j)];
    double* w_grad = params.cls_w.grad.row(j);
    const double* w = params.cls_w.value.row(j);
    for (size_t k = 0; k < h.size(); ++k) {
      w_grad[k] += dz[static_cast<size_t>(j)] * h[k];
      dh[k] += dz[static_cast<size_t>(j)] * w[k];
    }
  }
  return dh;
}

struct ForwardState {
  TextTape text;
  ImageTape image;
  CrossTape cross;
  BiLstmTape lstm;
  Matrix l_out, i_out, crossed;
  std::vector<double> h;          // classifier input (pre-dropout)
  Matrix h_mask;                  // dropout mask on h
  std::vector<double> h_dropped;  // classifier input after dropout
  Prediction pred;
};

std::vector<double> concat_rows(const Matrix& a, const Matrix& b) {
  std::vector<double> h;
  h.reserve(static_cast<size_t>(a.cols() + b.cols()));
  for (int c = 0; c < a.cols(); ++c) h.push_back(a(0, c));
  for (int c = 0; c < b.cols(); ++c) h.push_back(b(0, c));
  return h;
}

void forward_one(const ModelParams& params, const ModelInput& input, ForwardState& state,
                 Rng* dropout_rng) {
  const ModelConfig& cfg = params.config;
  auto need_text = [&]() {
    if (input.token_ids == nullptr)
      throw std::invalid_argument("model input: token ids required for fusion mode " +
                                  std::string(to_string(cfg.fusion)));
    return input.token_ids;
  };
  auto need_image = [&]() {
    if (input.image == nullptr)
      throw std::invalid_argument("model input: image required for fusion mode " +
                                  std::string(to_string(cfg.fusion)));
    return input.image;
  };
  switch (cfg.fusion) {
    case Fusion::text_only:
      state.l_out = text_forward(*need_text(), params, state.text, dropout_rng);
      state.h.assign(state.l_out.row(0), state.l_out.row(0) + cfg.d);
      break;
    case Fusion::image_only:
      state.i_out = image_forward(*need_image(), params, state.image, dropout_rng);
      state.h.assign(state.i_out.row(0), state.i_out.row(0) + cfg.d);
      break;
    case Fusion::concat:
      state.l_out = text_forward(*need_text(), params, state.text, dropout_rng);
      state.i_out = image_forward(*need_image(), params, state.image, dropout_rng);
      state.h = concat_rows(state.l_out, state.i_out);
      break;
    case Fusion::cross_att:
      state.l_out = text_forward(*need_text(), params, state.text, dropout_rng);
      state.i_out = image_forward(*need_image(), params, state.image, dropout_rng);
      state.crossed = cross_forward(state.l_out, state.i_out, *params.cross, state.cross);
      state.h = concat_rows(state.l_out, state.crossed);
      break;
    case Fusion::bilstm_att:
      state.h = bilstm_forward(*need_text(), params, state.lstm);
      break;
  }

  Matrix h_mat(1, static_cast<int>(state.h.size()));
  for (size_t k = 0; k < state.h.size(); ++k) h_mat(0, static_cast<int>(k)) = state.h[k];
  Matrix dropped = dropout_forward(h_mat, cfg.dropout, dropout_rng, &state.h_mask);
  state.h_dropped.assign(dropped.data(), dropped.data() + dropped.size());
  state.pred = classify(state.h_dropped, params);
}

void backward_one(ModelParams& params, ForwardState& state, const std::array<double, 2>& dz) {
  const ModelConfig& cfg = params.config;
  std::vector<double> dh_dropped = classify_backward(dz, state.h_dropped, params);
  Matrix dh_mat(1, static_cast<int>(dh_dropped.size()));
  for (size_t k = 0; k < dh_dropped.size(); ++k) dh_mat(0, static_cast<int>(k)) = dh_dropped[k];
  dh_mat = dropout_backward(dh_mat, state.h_mask);

  const int d = cfg.d;
  switch (cfg.fusion) {
    case Fusion::text_only: {
      Matrix dl(state.l_out.rows(), d);
      for (int c = 0; c < d; ++c) dl(0, c) = dh_mat(0, c);
      text_backward(dl, state.text, params);
      break;
    }
    case Fusion::image_only: {
      Matrix di(state.i_out.rows(), d);
      for (int c = 0; c < d; ++c) di(0, c) = dh_mat(0, c);
      image_backward(di, state.image, params);
      break;
    }
    case Fusion::concat: {
      Matrix dl(state.l_out.rows(), d);
      Matrix di(state.i_out.rows(), d);
      for (int c = 0; c < d; ++c) {
        dl(0, c) = dh_mat(0, c);
        di(0, c) = dh_mat(0, d + c);
      }
      text_backward(dl, state.text, params);
      image_backward(di, state.image, params);
      break;
    }
    case Fusion::cross_att: {
      Matrix d_crossed(state.crossed.rows(), d);
      for (int c = 0; c < d; ++c) d_crossed(0, c) = dh_mat(0, d + c);
      Matrix di(state.i_out.rows(), d);
      Matrix dl = cross_backward(d_crossed, state.cross, *params.cross, di);
      for (int c = 0; c < d; ++c) dl(0, c) += dh_mat(0, c);
      text_backward(dl, state.text, params);
      image_backward(di, state.image, params);
      break;
    }
    case Fusion::bilstm_att: {
      std::vector<double> dctx(dh_mat.data(), dh_mat.data() + dh_mat.size());
      bilstm_backward(dctx, state.lstm, params);
      break;
    }
  }
}

}  // namespace

Matrix encode_text(const std::vector<int>& ids, const ModelParams& params) {
  if (!params.text) throw std::logic_error("encode_text: model has no text encoder");
  TextTape tape;
  return text_forward(ids, params, tape, nullptr);
}

Matrix encode_image(const PixelTensor& px, const ModelParams& params) {
  if (!params.image) throw std::logic_error("encode_image: model has no image encoder");
  ImageTape tape;
  return image_forward(px, params, tape, nullptr);
}

Matrix cross_attention(const Matrix& L, const Matrix& I, const Matrix& wq, const Matrix& wk,
                       const Matrix& wv) {
  const int d = L.cols();
  if (I.cols() != d || wq.rows() != d || wq.cols() != d || wk.rows() != d || wk.cols() != d ||
      wv.rows() != d || wv.cols() != d)
    throw std::invalid_argument("cross_attention: dimension mismatch");
  CrossAttentionParams cross;
  cross.wq.value = wq;
  cross.wk.value = wk;
  cross.wv.value = wv;
  CrossTape tape;
  return cross_forward(L, I, cross, tape);
}

Prediction fuse_and_classify(const Matrix& L, const Matrix& second, const ModelParams& params) {
  const Fusion fusion = params.config.fusion;
  if (fusion != Fusion::cross_att && fusion != Fusion::concat)
    throw std::invalid_argument("fuse_and_classify: fusion mode must be cross_att or concat");
  std::vector<double> h = concat_rows(L, second);
  if (static_cast<int>(h.size()) != params.config.classifier_in())
    throw std::invalid_argument("fuse_and_classify: dimension mismatch");
  return classify(h, params);
}

Prediction bilstm_att_forward(const std::vector<int>& ids, const ModelParams& params) {
  if (!params.lstm) throw std::logic_error("bilstm_att_forward: model has no BiLSTM");
  BiLstmTape tape;
  std::vector<double> h = bilstm_forward(ids, params, tape);
  return classify(h, params);
}

Prediction predict(const ModelParams& params, const ModelInput& input) {
  ForwardState state;
  forward_one(params, input, state, nullptr);
  return state.pred;
}

double forward_backward(ModelParams& params, const std::vector<TrainExample>& batch,
                        const std::array<double, 2>& class_weights, Rng* dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("forward_backward: empty batch");
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& example : batch) {
    ForwardState state;
    forward_one(params, example.input, state, dropout_rng);
    const int y = static_cast<int>(example.label);
    const double w = class_weights[static_cast<size_t>(y)];
    // log p_y via the stable log-sum-exp route
    const double mx = std::max(state.pred.logits[0], state.pred.logits[1]);
    const double lse =
        mx + std::log(std::exp(state.pred.logits[0] - mx) + std::exp(state.pred.logits[1] - mx));
    const double log_p = state.pred.logits[static_cast<size_t>(y)] - lse;
    loss += -w * log_p * inv_batch;
    if (!std::isfinite(loss)) throw DivergenceError("forward_backward: NaN loss");

    std::array<double, 2> dz{};
    for (int j = 0; j < 2; ++j)
      dz[static_cast<size_t>(j)] =
          w * inv_batch * (state.pred.probs[static_cast<size_t>(j)] - (j == y ? 1.0 : 0.0));
    backward_one(params, state, dz);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// checkpoint format
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kCheckpointMagic = 0x43434B50;  // "CCKP"
constexpr uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

bool config_equal(const ModelConfig& a, const ModelConfig& b) {
  return a.d == b.d && a.layers == b.layers && a.heads == b.heads && a.patch_size == b.patch_size &&
         a.image_size == b.image_size && a.max_seq_len == b.max_seq_len && a.dropout == b.dropout &&
         a.fusion == b.fusion && a.vocab_size == b.vocab_size && a.ff_mult == b.ff_mult &&
         a.lstm_embed == b.lstm_embed && a.lstm_hidden == b.lstm_hidden &&
         a.lstm_max_len == b.lstm_max_len;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const ModelConfig& c = params.config;
  write_u32(out, kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  for (int v : {c.d, c.layers, c.heads, c.patch_size, c.image_size, c.max_seq_len,
                static_cast<int>(c.fusion), c.vocab_size, c.ff_mult, c.lstm_embed, c.lstm_hidden,
                c.lstm_max_len})
    write_u32(out, static_cast<uint32_t>(v));
  write_f64(out, c.dropout);

  uint32_t count = 0;
  params.for_each([&](const std::string&, const Param&) { ++count; });
  write_u32(out, count);
  params.for_each([&](const std::string& name, const Param& p) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(p.value.rows()));
    write_u32(out, static_cast<uint32_t>(p.value.cols()));
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  });
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig* expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  if (read_u32(in) != kCheckpointMagic) throw std::runtime_error("not a checkpoint file: " + path);
  if (read_u32(in) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  ModelConfig c;
  c.d = static_cast<int>(read_u32(in));
  c.layers = static_cast<int>(read_u32(in));
  c.heads = static_cast<int>(read_u32(in));
  c.patch_size = static_cast<int>(read_u32(in));
  c.image_size = static_cast<int>(read_u32(in));
  c.max_seq_len = static_cast<int>(read_u32(in));
  c.fusion = static_cast<Fusion>(read_u32(in));
  c.vocab_size = static_cast<int>(read_u32(in));
  c.ff_mult = static_cast<int>(read_u32(in));
  c.lstm_embed = static_cast<int>(read_u32(in));
  c.lstm_hidden = static_cast<int>(read_u32(in));
  c.lstm_max_len = static_cast<int>(read_u32(in));
  c.dropout = read_f64(in);
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  if (expect && !config_equal(c, *expect))
    throw std::runtime_error("checkpoint config mismatch: " + path);

  ModelParams params = ModelParams::init(c, 0);
  uint32_t count = read_u32(in);
  std::map<std::string, Param*> by_name;
  params.for_each([&](const std::string& name, Param& p) { by_name[name] = &p; });
  if (count != by_name.size())
    throw std::runtime_error("checkpoint parameter count mismatch: " + path);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rows = read_u32(in), cols = read_u32(in);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("unknown parameter '" + name + "' in " + path);
    Param& p = *it->second;
    if (p.value.rows() != static_cast<int>(rows) || p.value.cols() != static_cast<int>(cols))
      throw std::runtime_error("parameter shape mismatch for '" + name + "' in " + path);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint data: " + path);
  return params;
}

}  // namespace crosscue
