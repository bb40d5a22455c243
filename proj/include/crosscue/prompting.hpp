#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crosscue/corpus.hpp"

namespace crosscue {

struct PromptTemplate {
  enum class Mode { zero_shot, few_shot };
  Mode mode = Mode::zero_shot;
  // few_shot requires exactly four shots, two per class.
  std::vector<std::pair<std::string, Label>> shots;
};

// Byte-deterministic rendering. Zero-shot emits the single instruction
// block; few-shot emits four example blocks followed by the query block
// ending in "//".
std::string render_prompt(const PromptTemplate& tmpl, std::string_view tweet);

// Strips punctuation and whitespace, lowercases, then maps "commercial" /
// "notcommercial". Anything else is a parse failure (empty optional).
std::optional<Label> parse_response(std::string_view raw);

// Seeded helper: picks two training posts per class for a few-shot template.
PromptTemplate sample_few_shot(const std::vector<Post>& train_posts, uint64_t seed);

}  // namespace crosscue
