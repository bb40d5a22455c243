#include "crosscue/weak_labeler.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "crosscue/preprocess.hpp"
#include "crosscue/rng.hpp"

namespace crosscue {

const char* to_string(RuleCategory c) {
  switch (c) {
    case RuleCategory::guidelines: return "guidelines";
    case RuleCategory::endorsement: return "endorsement";
    case RuleCategory::barter: return "barter";
    case RuleCategory::affiliate: return "affiliate";
  }
  return "guidelines";
}

const char* to_string(RuleKind k) {
  switch (k) {
    case RuleKind::hashtag: return "hashtag";
    case RuleKind::word: return "word";
    case RuleKind::phrase: return "phrase";
    case RuleKind::brand_phrase: return "brand_phrase";
  }
  return "word";
}

namespace {

std::optional<RuleCategory> category_from_string(std::string_view s) {
  for (auto c : {RuleCategory::guidelines, RuleCategory::endorsement, RuleCategory::barter,
                 RuleCategory::affiliate})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

std::optional<RuleKind> kind_from_string(std::string_view s) {
  for (auto k : {RuleKind::hashtag, RuleKind::word, RuleKind::phrase, RuleKind::brand_phrase})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_mention_token(const std::string& token) { return token.size() > 1 && token[0] == '@'; }

}  // namespace

const std::vector<KeywordRule>& default_rules() {
  using C = RuleCategory;
  using K = RuleKind;
  static const std::vector<KeywordRule> rules = {
      // Guidelines: recommended and not recommended disclosure terms.
      {"#ad", C::guidelines, K::hashtag},
      {"ad", C::guidelines, K::word},
      {"#advert", C::guidelines, K::hashtag},
      {"#collab", C::guidelines, K::hashtag},
      {"collab", C::guidelines, K::word},
      {"#spon", C::guidelines, K::hashtag},
      {"#sponsored", C::guidelines, K::hashtag},
      {"spon", C::guidelines, K::word},
      {"#sp", C::guidelines, K::hashtag},
      {"sponsored", C::guidelines, K::word},
      {"thanks to", C::guidelines, K::brand_phrase},
      {"funded by", C::guidelines, K::brand_phrase},
      {"supported by", C::guidelines, K::brand_phrase},
      {"in association with", C::guidelines, K::brand_phrase},
      // Endorsements.
      {"#ambassador", C::endorsement, K::hashtag},
      {"ambassador", C::endorsement, K::word},
      // Barter.
      {"#gift", C::barter, K::hashtag},
      {"gift", C::barter, K::word},
      {"#giveaway", C::barter, K::hashtag},
      {"giveaway", C::barter, K::word},
      {"unpaid sample", C::barter, K::phrase},
      // Affiliate marketing.
      {"#aff", C::affiliate, K::hashtag},
      {"aff", C::affiliate, K::word},
      {"#affiliate", C::affiliate, K::hashtag},
      {"affiliate", C::affiliate, K::word},
      {"discount code", C::affiliate, K::phrase},
  };
  return rules;
}

std::vector<KeywordRule> load_rules(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open rule file: " + path);
  std::vector<KeywordRule> rules;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line[0] == '#' && line.find('\t') == std::string::npos)) continue;
    std::istringstream parts(line);
    std::string surface, category, kind;
    if (!std::getline(parts, surface, '\t') || !std::getline(parts, category, '\t') ||
        !std::getline(parts, kind))
      throw std::runtime_error("malformed rule at line " + std::to_string(line_no));
    auto c = category_from_string(category);
    auto k = kind_from_string(kind);
    if (!c || !k)
      throw std::runtime_error("unknown category or kind at line " + std::to_string(line_no));
    rules.push_back({lower(surface), *c, *k});
  }
  return rules;
}

RuleSet::RuleSet(std::vector<KeywordRule> rules) : rules_(std::move(rules)) {
  if (rules_.empty()) throw std::invalid_argument("RuleSet: rule list is empty");
  compiled_.reserve(rules_.size());
  for (const auto& rule : rules_) {
    Compiled c;
    c.rule = &rule;
    for (const auto& span : split_tokens(rule.surface)) c.tokens.push_back(span.token);
    if (c.tokens.empty()) throw std::invalid_argument("RuleSet: empty rule surface");
    compiled_.push_back(std::move(c));
  }
}

const KeywordRule* RuleSet::find(std::string_view surface) const {
  for (const auto& rule : rules_)
    if (rule.surface == surface) return &rule;
  return nullptr;
}

MatchResult RuleSet::match(std::string_view text) const {
  auto spans = split_tokens(text);
  std::vector<std::string> tokens;
  tokens.reserve(spans.size());
  for (const auto& span : spans) tokens.push_back(lower(span.token));

  MatchResult result;
  const int n = static_cast<int>(tokens.size());
  for (int pos = 0; pos < n; ++pos) {
    for (const auto& c : compiled_) {
      const int k = static_cast<int>(c.tokens.size());
      if (pos + k > n) continue;
      bool hit = true;
      for (int i = 0; i < k && hit; ++i) hit = tokens[static_cast<size_t>(pos + i)] == c.tokens[static_cast<size_t>(i)];
      if (!hit) continue;
      if (c.rule->kind == RuleKind::brand_phrase) {
        bool mention = false;
        for (int j = pos + k; j < std::min(n, pos + k + 3) && !mention; ++j)
          mention = is_mention_token(tokens[static_cast<size_t>(j)]);
        if (!mention) continue;
      }
      // Suppress "not X" and "not a(n) X".
      bool negated = (pos >= 1 && tokens[static_cast<size_t>(pos - 1)] == "not") ||
                     (pos >= 2 && tokens[static_cast<size_t>(pos - 2)] == "not" &&
                      (tokens[static_cast<size_t>(pos - 1)] == "a" ||
                       tokens[static_cast<size_t>(pos - 1)] == "an"));
      RuleMatch m{c.rule->surface, pos, pos + k};
      (negated ? result.negated_matches : result.matches).push_back(std::move(m));
    }
  }
  result.label = result.matches.empty() ? Label::non_commercial : Label::commercial;
  return result;
}

MatchResult weak_label(std::string_view text, const RuleSet& rules) { return rules.match(text); }

std::string scrub_keywords(std::string_view text, const std::vector<RuleMatch>& matches) {
  if (matches.empty()) return std::string(text);
  auto spans = split_tokens(text);
  std::vector<bool> drop(spans.size(), false);
  for (const auto& m : matches) {
    if (m.first < 0 || m.last > static_cast<int>(spans.size()) || m.first >= m.last)
      throw std::invalid_argument("scrub_keywords: span out of range");
    for (int i = m.first; i < m.last; ++i) drop[static_cast<size_t>(i)] = true;
  }
  std::vector<bool> erase(text.size(), false);
  for (size_t i = 0; i < spans.size(); ++i)
    if (drop[i])
      for (int b = spans[i].begin; b < spans[i].end; ++b) erase[static_cast<size_t>(b)] = true;

  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (size_t i = 0; i < text.size(); ++i) {
    if (erase[i]) continue;
    char ch = text[i];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += ch;
  }
  return out;
}

std::vector<Post> balance_noncommercial(const std::vector<Post>& posts, uint64_t seed) {
  // Deterministic account order: first appearance in the corpus.
  std::vector<std::string> account_order;
  std::map<std::string, std::vector<size_t>> commercial_by_account;
  std::map<std::string, std::vector<size_t>> noncommercial_by_account;
  std::map<std::string, bool> seen;
  for (size_t i = 0; i < posts.size(); ++i) {
    const Post& post = posts[i];
    if (!post.weak_label)
      throw std::invalid_argument("balance_noncommercial: post '" + post.id +
                                  "' carries no weak label");
    if (!seen[post.account_id]) {
      seen[post.account_id] = true;
      account_order.push_back(post.account_id);
    }
    auto& bucket = *post.weak_label == Label::commercial ? commercial_by_account
                                                         : noncommercial_by_account;
    bucket[post.account_id].push_back(i);
  }

  Rng rng(seed);
  std::vector<bool> keep(posts.size(), false);
  for (const auto& account : account_order) {
    const auto com_it = commercial_by_account.find(account);
    const size_t k = com_it == commercial_by_account.end() ? 0 : com_it->second.size();
    if (com_it != commercial_by_account.end())
      for (size_t idx : com_it->second) keep[idx] = true;
    auto nc_it = noncommercial_by_account.find(account);
    if (nc_it == noncommercial_by_account.end()) continue;
    std::vector<size_t> pool = nc_it->second;
    size_t take = std::min(k, pool.size());
    for (size_t j = 0; j < take; ++j) {
      size_t pick = j + static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size() - j)));
      std::swap(pool[j], pool[pick]);
      keep[pool[j]] = true;
    }
  }

  std::vector<Post> out;
  for (size_t i = 0; i < posts.size(); ++i)
    if (keep[i]) out.push_back(posts[i]);
  return out;
}

}  // namespace crosscue
