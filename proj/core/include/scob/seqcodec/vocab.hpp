#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

namespace scob {

using TokenId = std::int32_t;

/// Token inventory for the read objectives.
///
/// Id layout: the five specials first (PAD, EOS, MASK, the text-read prompt,
/// the OCR-read prompt), then the 1000 coordinate bins, then one id per
/// charset character in charset order. Character class = position in the
/// charset. Immutable once built.
class Vocab {
 public:
  static constexpr int kCoordBins = 1000;
  static constexpr int kNumSpecials = 5;
  static constexpr std::string_view kFormatHeader = "#scob-vocab v1";

  // Throws ConfigError for an empty charset or duplicate characters.
  explicit Vocab(std::string_view charset_utf8);

  TokenId pad() const { return 0; }
  TokenId eos() const { return 1; }
  TokenId mask() const { return 2; }
  TokenId prompt_text_read() const { return 3; }
  TokenId prompt_ocr_read() const { return 4; }
  bool is_prompt(TokenId id) const { return id == 3 || id == 4; }

  TokenId coord(int bin) const;  // throws RangeError
  bool is_coord(TokenId id) const { return id >= kNumSpecials && id < kNumSpecials + kCoordBins; }
  int coord_bin(TokenId id) const { return id - kNumSpecials; }

  bool is_char(TokenId id) const { return id >= kNumSpecials + kCoordBins && id < size(); }
  std::optional<TokenId> find_char(char32_t cp) const;
  TokenId char_id(char32_t cp) const;  // throws InputError naming the character
  char32_t char_of(TokenId id) const { return charset_[static_cast<std::size_t>(id - kNumSpecials - kCoordBins)]; }
  int char_class(TokenId id) const { return id - kNumSpecials - kCoordBins; }
  TokenId char_from_class(int cls) const { return kNumSpecials + kCoordBins + cls; }

  const std::u32string& charset() const { return charset_; }
  std::string charset_utf8() const;
  int num_chars() const { return static_cast<int>(charset_.size()); }
  int size() const { return kNumSpecials + kCoordBins + num_chars(); }

  std::string token_string(TokenId id) const;

  // Versioned text form: a header line, then [specials], [coords] and
  // [charset] sections with one token per line. Whitespace and control
  // characters are written as U+XXXX.
  std::string serialize() const;
  static Vocab parse(std::string_view text);  // throws ConfigError
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  // Git blob hash (SHA-1 of "blob <len>\0" + serialize()), lowercase hex.
  std::string content_hash() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.charset_ == b.charset_; }

 private:
  std::u32string charset_;
  std::unordered_map<char32_t, TokenId> char_ids_;
};

// Git-style blob hash of arbitrary bytes.
std::string git_blob_hash(std::string_view content);

}  // namespace scob
