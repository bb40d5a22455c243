#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace crosscue {

enum class Label { non_commercial = 0, commercial = 1 };

const char* to_string(Label label);
std::optional<Label> label_from_string(std::string_view s);

enum class Domain { beauty = 0, travel, fitness, food, tech, lifestyle };
inline constexpr int kNumDomains = 6;

const char* to_string(Domain domain);
std::optional<Domain> domain_from_string(std::string_view s);

// One social-media item. `image` is a path relative to the corpus file's
// directory, or empty for text-only posts.
struct Post {
  std::string id;
  std::string account_id;
  Domain domain = Domain::beauty;
  std::string text;
  std::optional<std::string> image;
  std::optional<Label> weak_label;
  std::optional<Label> gold_label;
  std::vector<std::string> matched_keywords;
};

// 8-bit RGB raster, row-major. Stored on disk as binary PPM (P6).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // width*height*3 bytes

  uint8_t& at(int y, int x, int c) { return rgb[static_cast<size_t>((y * width + x) * 3 + c)]; }
  uint8_t at(int y, int x, int c) const { return rgb[static_cast<size_t>((y * width + x) * 3 + c)]; }
};

Image load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Image& img);

// Corpus file: one JSON record per line. Errors name the offending line.
std::vector<Post> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<Post>& posts);

struct GenConfig {
  uint64_t seed = 7;
  int n_accounts = 10;
  int posts_per_account = 200;
  double commercial_rate = 0.5;
  // Fraction of posts carrying no image; these feed the text-only test set.
  double text_only_rate = 0.1;
  // Fraction of commercial posts with no disclosure keyword in the text
  // (commercial image signal only). Off by default.
  double undisclosed_rate = 0.0;
  int image_size = 32;
};

struct GeneratedPost {
  Post post;
  std::optional<Image> image;
};

// Deterministic given cfg.seed. Every disclosed commercial post contains at
// least one keyword from the default rule taxonomy; gold labels carry the
// generating class for all posts.
std::vector<GeneratedPost> generate_synthetic_corpus(const GenConfig& cfg);

// Writes corpus.jsonl plus images/<id>.ppm under dir; returns the posts as
// written (image paths filled in).
std::vector<Post> write_generated_corpus(const std::string& dir, const std::vector<GeneratedPost>& gen);

struct SplitSpec {
  std::set<std::string> train_accounts;
  std::set<std::string> dev_accounts;
  std::set<std::string> test_accounts;
  std::set<std::string> text_only_test_ids;
};

// Account-level split: accounts are shuffled by seed, then assigned greedily
// by descending post count to the split with the largest remaining quota.
SplitSpec split_by_account(const std::vector<Post>& posts, const std::array<double, 3>& ratios,
                           uint64_t seed);

// Selects image-less posts from test accounts, per-account counts
// proportional to that account's test-set post count.
std::set<std::string> make_text_only_test(const std::vector<Post>& posts, const SplitSpec& split,
                                          uint64_t seed);

void save_split(const std::string& path, const SplitSpec& split);
SplitSpec load_split(const std::string& path);

}  // namespace crosscue
