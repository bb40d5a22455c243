#include "crosscue/prompting.hpp"

#include <cctype>
#include <stdexcept>

#include "crosscue/rng.hpp"

namespace crosscue {

namespace {

constexpr const char* kInstruction = "Label the next text as 'commercial' or 'not commercial'. Text: ";

const char* label_text(Label label) {
  return label == Label::commercial ? "commercial" : "not commercial";
}

void check_shots(const PromptTemplate& tmpl) {
  if (tmpl.shots.size() != 4)
    throw std::invalid_argument("few-shot template needs exactly 4 shots, got " +
                                std::to_string(tmpl.shots.size()));
  int commercial = 0;
  for (const auto& [text, label] : tmpl.shots) commercial += label == Label::commercial;
  if (commercial != 2)
    throw std::invalid_argument("few-shot template needs two examples per class");
}

}  // namespace

std::string render_prompt(const PromptTemplate& tmpl, std::string_view tweet) {
  std::string out;
  if (tmpl.mode == PromptTemplate::Mode::zero_shot) {
    out += kInstruction;
    out += tweet;
    return out;
  }
  check_shots(tmpl);
  for (const auto& [text, label] : tmpl.shots) {
    out += kInstruction;
    out += text;
    out += " // ";
    out += label_text(label);
    out += '\n';
  }
  out += kInstruction;
  out += tweet;
  out += " //";
  return out;
}

std::optional<Label> parse_response(std::string_view raw) {
  std::string cleaned;
  for (char c : raw) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) cleaned += static_cast<char>(std::tolower(u));
  }
  if (cleaned == "commercial") return Label::commercial;
  if (cleaned == "notcommercial") return Label::non_commercial;
  return std::nullopt;
}

PromptTemplate sample_few_shot(const std::vector<Post>& train_posts, uint64_t seed) {
  std::vector<const Post*> by_class[2];
  for (const auto& post : train_posts) {
    auto label = post.weak_label ? post.weak_label : post.gold_label;
    if (label) by_class[static_cast<int>(*label)].push_back(&post);
  }
  if (by_class[0].size() < 2 || by_class[1].size() < 2)
    throw std::runtime_error("sample_few_shot: need at least two labeled posts per class");

  Rng rng(seed);
  PromptTemplate tmpl;
  tmpl.mode = PromptTemplate::Mode::few_shot;
  for (int c = 0; c < 2; ++c) {
    auto& pool = by_class[c];
    int first = rng.uniform_int(static_cast<int>(pool.size()));
    int second = rng.uniform_int(static_cast<int>(pool.size()) - 1);
    if (second >= first) ++second;
    tmpl.shots.emplace_back(pool[static_cast<size_t>(first)]->text, static_cast<Label>(c));
    tmpl.shots.emplace_back(pool[static_cast<size_t>(second)]->text, static_cast<Label>(c));
  }
  rng.shuffle(tmpl.shots);
  return tmpl;
}

}  // namespace crosscue
