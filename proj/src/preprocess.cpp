#include "crosscue/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crosscue {

namespace {

constexpr char kUrlSentinel = '\x01';
constexpr char kUserSentinel = '\x02';

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Curated subset of common emoji mapped to their text names. A trailing
// variation selector (U+FE0F) after any match is swallowed.
const std::vector<std::pair<std::string, std::string>>& emoji_table() {
  static const std::vector<std::pair<std::string, std::string>> table = [] {
    std::vector<std::pair<std::string, std::string>> t = {
        {"\U0001F600", "grinning_face"},
        {"\U0001F603", "grinning_face_with_big_eyes"},
        {"\U0001F604", "grinning_face_with_smiling_eyes"},
        {"\U0001F601", "beaming_face_with_smiling_eyes"},
        {"\U0001F606", "grinning_squinting_face"},
        {"\U0001F605", "grinning_face_with_sweat"},
        {"\U0001F602", "face_with_tears_of_joy"},
        {"\U0001F923", "rolling_on_the_floor_laughing"},
        {"\U0001F60A", "smiling_face_with_smiling_eyes"},
        {"\U0001F607", "smiling_face_with_halo"},
        {"\U0001F642", "slightly_smiling_face"},
        {"\U0001F609", "winking_face"},
        {"\U0001F60D", "smiling_face_with_heart_eyes"},
        {"\U0001F970", "smiling_face_with_hearts"},
        {"\U0001F618", "face_blowing_a_kiss"},
        {"\U0001F60B", "face_savoring_food"},
        {"\U0001F61C", "winking_face_with_tongue"},
        {"\U0001F60E", "smiling_face_with_sunglasses"},
        {"\U0001F914", "thinking_face"},
        {"\U0001F622", "crying_face"},
        {"\U0001F62D", "loudly_crying_face"},
        {"\U0001F621", "pouting_face"},
        {"\U0001F631", "face_screaming_in_fear"},
        {"\U0001F973", "partying_face"},
        {"\U0001F634", "sleeping_face"},
        {"\U0001F917", "hugging_face"},
        {"\U0001F924", "drooling_face"},
        {"\U0001F62C", "grimacing_face"},
        {"\U0001F643", "upside_down_face"},
        {"\U0001F60F", "smirking_face"},
        {"\U0001F937", "person_shrugging"},
        {"❤", "red_heart"},
        {"\U0001F9E1", "orange_heart"},
        {"\U0001F49B", "yellow_heart"},
        {"\U0001F49A", "green_heart"},
        {"\U0001F499", "blue_heart"},
        {"\U0001F49C", "purple_heart"},
        {"\U0001F5A4", "black_heart"},
        {"\U0001F90D", "white_heart"},
        {"\U0001F495", "two_hearts"},
        {"\U0001F496", "sparkling_heart"},
        {"\U0001F497", "growing_heart"},
        {"\U0001F493", "beating_heart"},
        {"\U0001F49E", "revolving_hearts"},
        {"\U0001F498", "heart_with_arrow"},
        {"\U0001F49D", "heart_with_ribbon"},
        {"\U0001F44D", "thumbs_up"},
        {"\U0001F44E", "thumbs_down"},
        {"\U0001F44F", "clapping_hands"},
        {"\U0001F64C", "raising_hands"},
        {"\U0001F44C", "ok_hand"},
        {"✌", "victory_hand"},
        {"\U0001F91E", "crossed_fingers"},
        {"\U0001F4AA", "flexed_biceps"},
        {"\U0001F64F", "folded_hands"},
        {"\U0001F44B", "waving_hand"},
        {"\U0001F91D", "handshake"},
        {"✋", "raised_hand"},
        {"\U0001F525", "fire"},
        {"✨", "sparkles"},
        {"⭐", "star"},
        {"\U0001F31F", "glowing_star"},
        {"\U0001F4AB", "dizzy"},
        {"\U0001F389", "party_popper"},
        {"\U0001F38A", "confetti_ball"},
        {"\U0001F381", "wrapped_gift"},
        {"\U0001F388", "balloon"},
        {"\U0001F382", "birthday_cake"},
        {"\U0001F370", "shortcake"},
        {"☕", "hot_beverage"},
        {"\U0001F355", "pizza"},
        {"\U0001F354", "hamburger"},
        {"\U0001F35F", "french_fries"},
        {"\U0001F363", "sushi"},
        {"\U0001F369", "doughnut"},
        {"\U0001F36A", "cookie"},
        {"\U0001F34E", "red_apple"},
        {"\U0001F951", "avocado"},
        {"\U0001F353", "strawberry"},
        {"\U0001F942", "clinking_glasses"},
        {"\U0001F377", "wine_glass"},
        {"\U0001F37A", "beer_mug"},
        {"\U0001F4A7", "droplet"},
        {"\U0001F308", "rainbow"},
        {"☀", "sun"},
        {"\U0001F31E", "sun_with_face"},
        {"\U0001F319", "crescent_moon"},
        {"⛅", "sun_behind_cloud"},
        {"❄", "snowflake"},
        {"\U0001F30A", "water_wave"},
        {"\U0001F338", "cherry_blossom"},
        {"\U0001F33A", "hibiscus"},
        {"\U0001F339", "rose"},
        {"\U0001F33B", "sunflower"},
        {"\U0001F334", "palm_tree"},
        {"\U0001F335", "cactus"},
        {"\U0001F340", "four_leaf_clover"},
        {"\U0001F341", "maple_leaf"},
        {"\U0001F436", "dog_face"},
        {"\U0001F431", "cat_face"},
        {"\U0001F43B", "bear"},
        {"\U0001F43C", "panda"},
        {"\U0001F98B", "butterfly"},
        {"\U0001F41D", "honeybee"},
        {"\U0001F41F", "fish"},
        {"\U0001F984", "unicorn"},
        {"✈", "airplane"},
        {"\U0001F697", "automobile"},
        {"\U0001F680", "rocket"},
        {"\U0001F30D", "globe_showing_europe_africa"},
        {"\U0001F4CD", "round_pushpin"},
        {"\U0001F9F3", "luggage"},
        {"\U0001F4F1", "mobile_phone"},
        {"\U0001F4BB", "laptop"},
        {"\U0001F4F7", "camera"},
        {"\U0001F4F8", "camera_with_flash"},
        {"\U0001F3A5", "movie_camera"},
        {"\U0001F3B6", "musical_notes"},
        {"\U0001F3B5", "musical_note"},
        {"\U0001F3A7", "headphone"},
        {"⌚", "watch"},
        {"\U0001F4A1", "light_bulb"},
        {"\U0001F50B", "battery"},
        {"\U0001F6CD", "shopping_bags"},
        {"\U0001F4B0", "money_bag"},
        {"\U0001F4B8", "money_with_wings"},
        {"\U0001F4B3", "credit_card"},
        {"\U0001F4E6", "package"},
        {"✅", "check_mark_button"},
        {"✔", "check_mark"},
        {"❌", "cross_mark"},
        {"⚡", "high_voltage"},
        {"\U0001F3C6", "trophy"},
        {"\U0001F947", "first_place_medal"},
        {"\U0001F3AF", "bullseye"},
        {"\U0001F4DA", "books"},
        {"\U0001F4D6", "open_book"},
        {"✏", "pencil"},
        {"\U0001F4DD", "memo"},
        {"\U0001F4C5", "calendar"},
        {"⏰", "alarm_clock"},
        {"\U0001F514", "bell"},
        {"\U0001F4E2", "loudspeaker"},
        {"\U0001F4AC", "speech_balloon"},
        {"\U0001F440", "eyes"},
        {"\U0001F4AF", "hundred_points"},
        {"\U0001F4A5", "collision"},
        {"\U0001F4A4", "zzz"},
        {"\U0001F451", "crown"},
        {"\U0001F484", "lipstick"},
        {"\U0001F485", "nail_polish"},
        {"\U0001F457", "dress"},
        {"\U0001F45F", "running_shoe"},
        {"\U0001F460", "high_heeled_shoe"},
        {"\U0001F9F4", "lotion_bottle"},
        {"\U0001F9D8", "person_in_lotus_position"},
        {"\U0001F3C3", "person_running"},
        {"\U0001F6B4", "person_biking"},
        {"⚽", "soccer_ball"},
        {"\U0001F3C0", "basketball"},
    };
    // Longest byte sequence first so multi-byte prefixes cannot shadow.
    std::stable_sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
      return a.first.size() > b.first.size();
    });
    return t;
  }();
  return table;
}

bool starts_with_ci(std::string_view s, size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > s.size()) return false;
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[pos + i])) != prefix[i]) return false;
  }
  return true;
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  // Pass 1: URLs, @-mentions and pre-existing HTTPURL placeholders become
  // sentinels so the lowercase pass cannot touch them.
  std::string s;
  s.reserve(raw.size());
  size_t i = 0;
  while (i < raw.size()) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    bool at_word_start = s.empty() || !is_word_char(static_cast<unsigned char>(s.back()));
    if (starts_with_ci(raw, i, "http://") || starts_with_ci(raw, i, "https://") ||
        (at_word_start && starts_with_ci(raw, i, "www."))) {
      while (i < raw.size() && !is_space(static_cast<unsigned char>(raw[i]))) ++i;
      s += kUrlSentinel;
      continue;
    }
    if (at_word_start && starts_with_ci(raw, i, "httpurl") &&
        (i + 7 == raw.size() || !is_word_char(static_cast<unsigned char>(raw[i + 7])))) {
      i += 7;
      s += kUrlSentinel;
      continue;
    }
    if (c == '@' && i + 1 < raw.size() && is_word_char(static_cast<unsigned char>(raw[i + 1]))) {
      ++i;
      while (i < raw.size() && is_word_char(static_cast<unsigned char>(raw[i]))) ++i;
      s += kUserSentinel;
      continue;
    }
    s += static_cast<char>(c);
    ++i;
  }

  // Pass 2: lowercase ASCII, expand emoji, restore placeholders.
  std::string out;
  out.reserve(s.size() + 16);
  i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c == static_cast<unsigned char>(kUrlSentinel)) {
      out += "HTTPURL";
      ++i;
      continue;
    }
    if (c == static_cast<unsigned char>(kUserSentinel)) {
      out += "@USER";
      ++i;
      continue;
    }
    if (c >= 0xE2) {
      bool matched = false;
      for (const auto& [bytes, name] : emoji_table()) {
        if (s.compare(i, bytes.size(), bytes) == 0) {
          out += " :";
          out += name;
          out += ": ";
          i += bytes.size();
          if (s.compare(i, 3, "️") == 0) i += 3;  // variation selector
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out += static_cast<char>(std::tolower(c));
    ++i;
  }

  // Pass 3: collapse whitespace.
  std::string collapsed;
  collapsed.reserve(out.size());
  bool pending_space = false;
  for (char ch : out) {
    if (is_space(static_cast<unsigned char>(ch))) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed += ' ';
    pending_space = false;
    collapsed += ch;
  }
  return collapsed;
}

std::vector<TokenSpan> split_tokens(std::string_view text) {
  std::vector<TokenSpan> out;
  size_t i = 0;
  const size_t n = text.size();
  auto word_run_end = [&](size_t start) {
    size_t j = start;
    while (j < n) {
      unsigned char c = static_cast<unsigned char>(text[j]);
      if (is_word_char(c)) {
        ++j;
      } else if (c == '\'' && j + 1 < n && is_word_char(static_cast<unsigned char>(text[j + 1])) &&
                 j > start) {
        ++j;  // apostrophe inside a word ("don't")
      } else {
        break;
      }
    }
    return j;
  };
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    size_t begin = i;
    if ((c == '#' || c == '@') && i + 1 < n && is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      i = word_run_end(i + 1);
    } else if (c == ':') {
      // ':name:' forms a single token.
      size_t j = word_run_end(i + 1);
      if (j > i + 1 && j < n && text[j] == ':') {
        i = j + 1;
      } else {
        while (i < n && text[i] == ':') ++i;
      }
    } else if (is_word_char(c)) {
      i = word_run_end(i);
    } else if (c >= 0x80) {
      while (i < n && static_cast<unsigned char>(text[i]) >= 0x80) ++i;
    } else {
      while (i < n && text[i] == static_cast<char>(c)) ++i;  // run of one punctuation char
    }
    out.push_back(TokenSpan{std::string(text.substr(begin, i - begin)), static_cast<int>(begin),
                            static_cast<int>(i)});
  }
  return out;
}

Vocab::Vocab() {
  add("[CLS]");
  add("[PAD]");
  add("[UNK]");
  add("@USER");
  add("HTTPURL");
}

void Vocab::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

Vocab Vocab::build(const std::vector<std::string>& texts, int min_freq, int max_size) {
  std::map<std::string, long long> counts;
  for (const auto& text : texts) {
    for (const auto& span : split_tokens(normalize_text(text))) ++counts[span.token];
  }
  std::vector<std::pair<std::string, long long>> entries;
  Vocab vocab;
  for (const auto& [token, freq] : counts) {
    if (freq < min_freq) continue;
    if (vocab.token_to_id_.count(token)) continue;  // specials stay fixed
    entries.emplace_back(token, freq);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [token, freq] : entries) {
    (void)freq;
    if (vocab.size() >= max_size) break;
    vocab.add(token);
  }
  return vocab;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (int i = 0; i < size(); ++i) out << id_to_token_[static_cast<size_t>(i)] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocab file: " + path);
  Vocab vocab;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("malformed vocab entry at line " + std::to_string(line_no));
    std::string token = line.substr(0, tab);
    int id = std::stoi(line.substr(tab + 1));
    if (id < 5) {
      if (id != vocab.id(token))
        throw std::runtime_error("special token mismatch at line " + std::to_string(line_no));
      continue;
    }
    if (id != vocab.size())
      throw std::runtime_error("non-contiguous vocab id at line " + std::to_string(line_no));
    vocab.add(token);
  }
  return vocab;
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, int max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be >= 2");
  TokenSeq seq;
  seq.tokens.push_back("[CLS]");
  seq.ids.push_back(Vocab::kCls);
  for (const auto& span : split_tokens(text)) {
    if (static_cast<int>(seq.ids.size()) >= max_len) break;
    seq.tokens.push_back(span.token);
    seq.ids.push_back(vocab.id(span.token));
  }
  return seq;
}

PixelTensor prepare_image(const Image& img, int target) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3) {
    throw std::runtime_error("prepare_image: invalid image data");
  }
  if (target <= 0) throw std::invalid_argument("prepare_image: target must be positive");
  PixelTensor t;
  t.size = target;
  t.data.resize(static_cast<size_t>(3) * target * target);
  for (int y = 0; y < target; ++y) {
    int sy = std::min(img.height - 1, y * img.height / target);
    for (int x = 0; x < target; ++x) {
      int sx = std::min(img.width - 1, x * img.width / target);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = img.at(sy, sx, c) / 255.0;
    }
  }
  return t;
}

}  // namespace crosscue
