#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crosscue/corpus.hpp"

namespace crosscue {

// Lowercases, maps URLs -> HTTPURL, @-mentions -> @USER, known emoji ->
// :name: and collapses whitespace. Idempotent.
std::string normalize_text(std::string_view raw);

struct TokenSpan {
  std::string token;
  int begin = 0;  // byte offsets into the source string
  int end = 0;
};

// Whitespace-and-punctuation tokenizer. '#' and '@' stay attached to the
// following word, ':emoji_name:' is one token, runs of identical
// punctuation form one token.
std::vector<TokenSpan> split_tokens(std::string_view text);

class Vocab {
 public:
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kUnk = 2;
  static constexpr int kUser = 3;
  static constexpr int kUrl = 4;

  Vocab();

  // Fits on raw training texts (normalized internally): tokens with
  // frequency >= min_freq, capped at max_size entries, specials first.
  static Vocab build(const std::vector<std::string>& texts, int min_freq = 2, int max_size = 20000);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return id_to_token_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  void add(const std::string& token);
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct TokenSeq {
  std::vector<std::string> tokens;  // leading [CLS]
  std::vector<int> ids;
};

TokenSeq tokenize(std::string_view text, const Vocab& vocab, int max_len);

// (3, size, size) tensor, channel-major, values in [0,1].
struct PixelTensor {
  int size = 0;
  std::vector<double> data;

  double& at(int c, int y, int x) { return data[static_cast<size_t>((c * size + y) * size + x)]; }
  double at(int c, int y, int x) const { return data[static_cast<size_t>((c * size + y) * size + x)]; }
};

// Nearest-neighbor resize to target x target, values divided by 255.
PixelTensor prepare_image(const Image& img, int target);

}  // namespace crosscue
