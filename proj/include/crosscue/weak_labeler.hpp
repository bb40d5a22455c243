#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "crosscue/corpus.hpp"

namespace crosscue {

enum class RuleCategory { guidelines = 0, endorsement, barter, affiliate };
enum class RuleKind { hashtag = 0, word, phrase, brand_phrase };

const char* to_string(RuleCategory c);
const char* to_string(RuleKind k);

struct KeywordRule {
  std::string surface;  // lowercase; hashtag rules start with '#'
  RuleCategory category = RuleCategory::guidelines;
  RuleKind kind = RuleKind::word;
};

// The 26-entry commercial keyword taxonomy built into the labeler.
const std::vector<KeywordRule>& default_rules();

// One rule per line: surface<TAB>category<TAB>kind.
std::vector<KeywordRule> load_rules(const std::string& path);

struct RuleMatch {
  std::string surface;
  int first = 0;  // token span [first, last)
  int last = 0;
};

struct MatchResult {
  Label label = Label::non_commercial;
  std::vector<RuleMatch> matches;
  std::vector<RuleMatch> negated_matches;
};

// Rules compiled for matching; immutable and shareable across threads.
class RuleSet {
 public:
  explicit RuleSet(std::vector<KeywordRule> rules);

  // Case-insensitive token-boundary matching. A match is suppressed when
  // the preceding tokens are "not" or "not a"/"not an". brand_phrase rules
  // require an @-mention within the three tokens after the phrase.
  MatchResult match(std::string_view text) const;

  const std::vector<KeywordRule>& rules() const { return rules_; }
  const KeywordRule* find(std::string_view surface) const;

 private:
  struct Compiled {
    std::vector<std::string> tokens;
    const KeywordRule* rule;
  };
  std::vector<KeywordRule> rules_;
  std::vector<Compiled> compiled_;
};

MatchResult weak_label(std::string_view text, const RuleSet& rules);

// Deletes the matched keyword tokens from text and normalizes whitespace.
// Overlapping spans are deduplicated by union. Idempotent.
std::string scrub_keywords(std::string_view text, const std::vector<RuleMatch>& matches);

// Per account with k weakly-commercial posts, keeps all commercial posts and
// min(k, available) non-commercial ones sampled without replacement.
std::vector<Post> balance_noncommercial(const std::vector<Post>& posts, uint64_t seed);

}  // namespace crosscue
