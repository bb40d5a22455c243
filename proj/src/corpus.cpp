#include "crosscue/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "crosscue/rng.hpp"
#include "crosscue/weak_labeler.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace crosscue {

const char* to_string(Label label) {
  return label == Label::commercial ? "commercial" : "non_commercial";
}

std::optional<Label> label_from_string(std::string_view s) {
  if (s == "commercial") return Label::commercial;
  if (s == "non_commercial") return Label::non_commercial;
  return std::nullopt;
}

const char* to_string(Domain domain) {
  switch (domain) {
    case Domain::beauty: return "beauty";
    case Domain::travel: return "travel";
    case Domain::fitness: return "fitness";
    case Domain::food: return "food";
    case Domain::tech: return "tech";
    case Domain::lifestyle: return "lifestyle";
  }
  return "beauty";
}

std::optional<Domain> domain_from_string(std::string_view s) {
  for (int i = 0; i < kNumDomains; ++i) {
    Domain d = static_cast<Domain>(i);
    if (s == to_string(d)) return d;
  }
  return std::nullopt;
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("unsupported image format (want P6): " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("corrupt image header: " + path);
  in.get();  // single whitespace after maxval
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw std::runtime_error("truncated image data: " + path);
  return img;
}

void save_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("failed writing image file: " + path);
}

namespace {

ordered_json post_to_json(const Post& post) {
  ordered_json j;
  j["id"] = post.id;
  j["account_id"] = post.account_id;
  j["domain"] = to_string(post.domain);
  j["text"] = post.text;
  j["image"] = post.image ? ordered_json(*post.image) : ordered_json(nullptr);
  j["weak_label"] = post.weak_label ? ordered_json(to_string(*post.weak_label)) : ordered_json(nullptr);
  j["gold_label"] = post.gold_label ? ordered_json(to_string(*post.gold_label)) : ordered_json(nullptr);
  j["matched_keywords"] = post.matched_keywords;
  return j;
}

Post post_from_json(const ordered_json& j) {
  Post post;
  post.id = j.at("id").get<std::string>();
  post.account_id = j.at("account_id").get<std::string>();
  auto domain = domain_from_string(j.at("domain").get<std::string>());
  if (!domain) throw std::runtime_error("unknown domain '" + j.at("domain").get<std::string>() + "'");
  post.domain = *domain;
  post.text = j.at("text").get<std::string>();
  if (j.contains("image") && !j.at("image").is_null()) post.image = j.at("image").get<std::string>();
  for (const char* key : {"weak_label", "gold_label"}) {
    if (j.contains(key) && !j.at(key).is_null()) {
      auto label = label_from_string(j.at(key).get<std::string>());
      if (!label) throw std::runtime_error(std::string("unknown label in field ") + key);
      (std::string_view(key) == "weak_label" ? post.weak_label : post.gold_label) = *label;
    }
  }
  if (j.contains("matched_keywords"))
    post.matched_keywords = j.at("matched_keywords").get<std::vector<std::string>>();
  return post;
}

}  // namespace

std::vector<Post> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<Post> posts;
  std::unordered_map<std::string, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Post post;
    try {
      post = post_from_json(ordered_json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed record at line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = seen.emplace(post.id, line_no);
    if (!inserted) throw std::runtime_error("duplicate id at line " + std::to_string(line_no));
    posts.push_back(std::move(post));
  }
  return posts;
}

void save_corpus(const std::string& path, const std::vector<Post>& posts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& post : posts) out << post_to_json(post).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing corpus file: " + path);
}

namespace {

struct DomainFlavor {
  std::vector<std::string> words;   // shared topic vocabulary
  std::string brand;                // @-mention target for commercial posts
  std::array<int, 3> product_color; // bright patch color
};

const std::array<DomainFlavor, kNumDomains>& domain_flavors() {
  static const std::array<DomainFlavor, kNumDomains> flavors = {{
      {{"serum", "lipstick", "glow", "skincare", "palette", "lashes", "foundation", "blush",
        "routine", "mascara", "cleanser", "toner"},
       "glowlab",
       {250, 120, 210}},
      {{"island", "itinerary", "passport", "beach", "sunset", "wanderlust", "hostel", "mountains",
        "jetlag", "luggage", "vista", "coastline"},
       "wanderhq",
       {60, 200, 250}},
      {{"workout", "reps", "protein", "cardio", "deadlift", "yoga", "marathon", "stretch", "gains",
        "treadmill", "squats", "recovery"},
       "pulsegear",
       {110, 250, 90}},
      {{"recipe", "sourdough", "brunch", "tacos", "pasta", "roasted", "dessert", "kitchen",
        "flavors", "simmer", "crispy", "seasoning"},
       "tastebox",
       {255, 170, 60}},
      {{"gadget", "firmware", "pixels", "benchmark", "keyboard", "headset", "processor", "battery",
        "screen", "upgrade", "widget", "latency"},
       "bytenest",
       {100, 120, 255}},
      {{"cozy", "minimal", "journal", "declutter", "candles", "weekend", "balcony", "thrifted",
        "playlist", "mornings", "vibes", "rituals"},
       "hyggeco",
       {255, 240, 90}},
  }};
  return flavors;
}

// Style vocabularies carry the class signal that survives keyword
// scrubbing. None of these words appear in the keyword taxonomy.
const std::vector<std::string>& commercial_style_words() {
  static const std::vector<std::string> words = {
      "brand",  "launch",   "shop",     "store", "collection", "partner", "promo",
      "offer",  "deal",     "campaign", "drop",  "restock",    "stockists", "checkout"};
  return words;
}

const std::vector<std::string>& personal_style_words() {
  static const std::vector<std::string> words = {
      "honestly", "feeling", "quiet",    "finally", "weather",  "friends", "family",
      "laughed",  "ordinary", "simple",  "evening", "slow",     "grateful", "rainy"};
  return words;
}

const std::vector<std::string>& neutral_words() {
  static const std::vector<std::string> words = {"today",  "little", "really", "just", "love",
                                                 "new",    "best",   "out",    "now",  "week",
                                                 "trying", "again"};
  return words;
}

const std::vector<std::string>& friend_mentions() {
  static const std::vector<std::string> names = {"sam_j", "mia_k", "leo", "priya", "jonas", "elle"};
  return names;
}

const std::vector<std::string>& raw_emoji() {
  static const std::vector<std::string> emoji = {"\U0001F60A", "✨",     "\U0001F525",
                                                 "\U0001F44D", "\U0001F4F8", "❤️"};
  return emoji;
}

// Keyword constructs that are guaranteed to match their rule: brand_phrase
// surfaces get the required @-mention appended.
std::vector<std::string> plant_keyword(const KeywordRule& rule, const std::string& brand, Rng& rng) {
  std::vector<std::string> tokens;
  std::istringstream words(rule.surface);
  std::string w;
  while (words >> w) tokens.push_back(w);
  if (rule.kind == RuleKind::brand_phrase) {
    // "thanks to @brand" with the mention at most three tokens after.
    if (rng.bernoulli(0.3)) tokens.push_back(rng.pick(neutral_words()));
    tokens.push_back("@" + brand);
  }
  return tokens;
}

Image render_image(const GenConfig& cfg, Domain domain, bool product_patch, bool distractor_patch,
                   Rng& rng) {
  const int size = cfg.image_size;
  Image img;
  img.width = size;
  img.height = size;
  img.rgb.resize(static_cast<size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<uint8_t>(90 + rng.uniform_int(60));

  const int cell = std::max(1, size / 4);
  const int cells_per_side = size / cell;
  auto draw_patch = [&](const std::array<int, 3>& color, int avoid_cell) {
    int cell_idx = rng.uniform_int(cells_per_side * cells_per_side);
    if (cell_idx == avoid_cell) cell_idx = (cell_idx + 1) % (cells_per_side * cells_per_side);
    int cy = (cell_idx / cells_per_side) * cell;
    int cx = (cell_idx % cells_per_side) * cell;
    for (int y = cy; y < cy + cell; ++y)
      for (int x = cx; x < cx + cell; ++x)
        for (int c = 0; c < 3; ++c) {
          int v = color[static_cast<size_t>(c)] + rng.uniform_int(31) - 15;
          img.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0, 255));
        }
    return cell_idx;
  };

  int product_cell = -1;
  if (product_patch)
    product_cell = draw_patch(domain_flavors()[static_cast<size_t>(domain)].product_color, -1);
  if (distractor_patch) {
    int other = (static_cast<int>(domain) + 1 + rng.uniform_int(kNumDomains - 1)) % kNumDomains;
    draw_patch(domain_flavors()[static_cast<size_t>(other)].product_color, product_cell);
  }
  return img;
}

std::string make_text(const GenConfig&, Domain domain, bool commercial, bool disclosed, Rng& rng,
                      const RuleSet& rules) {
  const auto& flavor = domain_flavors()[static_cast<size_t>(domain)];
  std::vector<std::string> tokens;
  tokens.push_back(rng.pick(neutral_words()));
  if (rng.bernoulli(0.5)) tokens.push_back(rng.pick(neutral_words()));

  std::vector<std::string> topic = flavor.words;
  rng.shuffle(topic);
  for (int i = 0; i < 3; ++i) tokens.push_back(topic[static_cast<size_t>(i)]);

  const auto& style = commercial ? commercial_style_words() : personal_style_words();
  for (int slot = 0; slot < 2; ++slot)
    tokens.push_back(rng.bernoulli(0.75) ? rng.pick(style) : rng.pick(neutral_words()));

  rng.shuffle(tokens);

  double mention_rate = commercial ? 0.5 : 0.2;
  if (rng.bernoulli(mention_rate)) {
    std::string mention =
        commercial ? "@" + flavor.brand : "@" + rng.pick(friend_mentions());
    tokens.insert(tokens.begin() + rng.uniform_int(static_cast<int>(tokens.size()) + 1), mention);
  }

  if (commercial && disclosed) {
    const auto& all = rules.rules();
    const KeywordRule& rule = all[static_cast<size_t>(rng.uniform_int(static_cast<int>(all.size())))];
    auto construct = plant_keyword(rule, flavor.brand, rng);
    int at = rng.uniform_int(static_cast<int>(tokens.size()) + 1);
    tokens.insert(tokens.begin() + at, construct.begin(), construct.end());
  }

  std::string text;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) text += ' ';
    text += tokens[i];
  }
  if (rng.bernoulli(0.3)) text += rng.bernoulli(0.5) ? "!" : ".";
  if (rng.bernoulli(0.15)) {
    text += ' ';
    text += rng.pick(raw_emoji());
  }
  return text;
}

}  // namespace

std::vector<GeneratedPost> generate_synthetic_corpus(const GenConfig& cfg) {
  if (cfg.n_accounts < 1 || cfg.posts_per_account < 1)
    throw std::invalid_argument("generate_synthetic_corpus: need at least one account and post");
  if (!(cfg.commercial_rate > 0.0 && cfg.commercial_rate < 1.0))
    throw std::invalid_argument("generate_synthetic_corpus: commercial_rate must be in (0,1)");
  if (cfg.text_only_rate < 0.0 || cfg.text_only_rate >= 1.0 || cfg.undisclosed_rate < 0.0 ||
      cfg.undisclosed_rate >= 1.0)
    throw std::invalid_argument("generate_synthetic_corpus: rates must be in [0,1)");

  RuleSet rules(default_rules());
  Rng rng(cfg.seed);
  std::vector<GeneratedPost> out;
  out.reserve(static_cast<size_t>(cfg.n_accounts) * cfg.posts_per_account);

  for (int a = 0; a < cfg.n_accounts; ++a) {
    char account_id[32];
    std::snprintf(account_id, sizeof account_id, "acct_%03d", a);
    Domain domain = static_cast<Domain>(a % kNumDomains);
    for (int p = 0; p < cfg.posts_per_account; ++p) {
      GeneratedPost gen;
      Post& post = gen.post;
      char post_id[64];
      std::snprintf(post_id, sizeof post_id, "%s_p%04d", account_id, p);
      post.id = post_id;
      post.account_id = account_id;
      post.domain = domain;

      bool commercial = rng.bernoulli(cfg.commercial_rate);
      bool disclosed = !commercial || !rng.bernoulli(cfg.undisclosed_rate);
      bool text_only = rng.bernoulli(cfg.text_only_rate);
      post.gold_label = commercial ? Label::commercial : Label::non_commercial;
      post.text = make_text(cfg, domain, commercial, disclosed, rng, rules);

      if (!text_only) {
        bool product = rng.bernoulli(commercial ? 0.9 : 0.1);
        bool distractor = rng.bernoulli(0.35);
        gen.image = render_image(cfg, domain, product, distractor, rng);
        post.image = "images/" + post.id + ".ppm";
      }
      out.push_back(std::move(gen));
    }
  }
  return out;
}

std::vector<Post> write_generated_corpus(const std::string& dir,
                                         const std::vector<GeneratedPost>& gen) {
  fs::create_directories(fs::path(dir) / "images");
  std::vector<Post> posts;
  posts.reserve(gen.size());
  for (const auto& g : gen) {
    if (g.image) save_ppm((fs::path(dir) / *g.post.image).string(), *g.image);
    posts.push_back(g.post);
  }
  save_corpus((fs::path(dir) / "corpus.jsonl").string(), posts);
  return posts;
}

SplitSpec split_by_account(const std::vector<Post>& posts, const std::array<double, 3>& ratios,
                           uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (!(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0) || std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_by_account: ratios must be positive and sum to 1");

  std::vector<std::string> accounts;
  std::map<std::string, long long> counts;
  for (const auto& post : posts) {
    auto [it, inserted] = counts.emplace(post.account_id, 0);
    if (inserted) accounts.push_back(post.account_id);
    ++it->second;
  }
  if (accounts.size() < 3)
    throw std::invalid_argument("split_by_account: need at least 3 accounts, got " +
                                std::to_string(accounts.size()));

  Rng rng(seed);
  rng.shuffle(accounts);
  std::stable_sort(accounts.begin(), accounts.end(), [&](const auto& a, const auto& b) {
    return counts.at(a) > counts.at(b);
  });

  long long total = static_cast<long long>(posts.size());
  std::array<double, 3> quota = {ratios[0] * total, ratios[1] * total, ratios[2] * total};
  std::array<double, 3> assigned = {0, 0, 0};
  std::array<std::vector<std::string>, 3> buckets;
  for (const auto& account : accounts) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (quota[s] - assigned[s] > quota[best] - assigned[best]) best = s;
    buckets[static_cast<size_t>(best)].push_back(account);
    assigned[static_cast<size_t>(best)] += static_cast<double>(counts.at(account));
  }

  // A heavily skewed ratio can starve a split; move the smallest account of
  // the most populated split into each empty one.
  for (int s = 0; s < 3; ++s) {
    if (!buckets[static_cast<size_t>(s)].empty()) continue;
    int donor = 0;
    for (int t = 1; t < 3; ++t)
      if (buckets[static_cast<size_t>(t)].size() > buckets[static_cast<size_t>(donor)].size())
        donor = t;
    auto& from = buckets[static_cast<size_t>(donor)];
    auto smallest = std::min_element(from.begin(), from.end(), [&](const auto& a, const auto& b) {
      if (counts.at(a) != counts.at(b)) return counts.at(a) < counts.at(b);
      return a < b;
    });
    buckets[static_cast<size_t>(s)].push_back(*smallest);
    from.erase(smallest);
  }

  SplitSpec split;
  split.train_accounts.insert(buckets[0].begin(), buckets[0].end());
  split.dev_accounts.insert(buckets[1].begin(), buckets[1].end());
  split.test_accounts.insert(buckets[2].begin(), buckets[2].end());
  return split;
}

std::set<std::string> make_text_only_test(const std::vector<Post>& posts, const SplitSpec& split,
                                          uint64_t seed) {
  if (split.test_accounts.empty())
    throw std::invalid_argument("make_text_only_test: test account set is empty");

  std::map<std::string, long long> test_post_counts;  // text-image posts per test account
  std::map<std::string, std::vector<std::string>> available;  // text-only ids per test account
  for (const auto& post : posts) {
    if (!split.test_accounts.count(post.account_id)) continue;
    if (post.image)
      ++test_post_counts[post.account_id];
    else
      available[post.account_id].push_back(post.id);
  }

  long long total_available = 0;
  for (const auto& [account, ids] : available) total_available += static_cast<long long>(ids.size());
  long long weight_sum = 0;
  for (const auto& [account, count] : test_post_counts) weight_sum += count;

  Rng rng(seed);
  std::set<std::string> selected;
  for (auto& [account, ids] : available) {
    long long target;
    if (weight_sum == 0) {
      target = static_cast<long long>(ids.size());
    } else {
      auto it = test_post_counts.find(account);
      long long weight = it == test_post_counts.end() ? 0 : it->second;
      target = std::min<long long>(
          static_cast<long long>(ids.size()),
          std::llround(static_cast<double>(total_available) * weight / weight_sum));
    }
    // Partial Fisher-Yates draw of `target` ids without replacement.
    std::vector<std::string> pool = ids;
    for (long long k = 0; k < target; ++k) {
      int j = static_cast<int>(k) + rng.uniform_int(static_cast<int>(pool.size() - k));
      std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
      selected.insert(pool[static_cast<size_t>(k)]);
    }
  }
  return selected;
}

void save_split(const std::string& path, const SplitSpec& split) {
  ordered_json j;
  j["train_accounts"] = split.train_accounts;
  j["dev_accounts"] = split.dev_accounts;
  j["test_accounts"] = split.test_accounts;
  j["text_only_test_ids"] = split.text_only_test_ids;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write split file: " + path);
  out << j.dump(2) << '\n';
}

SplitSpec load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  ordered_json j;
  in >> j;
  SplitSpec split;
  auto read_set = [&](const char* key, std::set<std::string>& out) {
    for (const auto& v : j.at(key)) out.insert(v.get<std::string>());
  };
  read_set("train_accounts", split.train_accounts);
  read_set("dev_accounts", split.dev_accounts);
  read_set("test_accounts", split.test_accounts);
  if (j.contains("text_only_test_ids")) read_set("text_only_test_ids", split.text_only_test_ids);
  return split;
}

}  // namespace crosscue
