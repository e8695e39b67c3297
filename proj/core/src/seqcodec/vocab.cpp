#include "scob/seqcodec/vocab.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <fstream>
#include <sstream>
#include <vector>

#include "scob/util/errors.hpp"
#include "scob/util/utf8.hpp"

namespace scob {
namespace {

constexpr std::string_view kSpecialNames[] = {"<pad>", "<eos>", "<mask>", "<text_read>", "<ocr_read>"};

bool needs_escape(char32_t cp) { return cp <= 0x20 || cp == 0x7F || (cp >= 0x80 && cp < 0xA0); }

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < text.size()) lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

Vocab::Vocab(std::string_view charset_utf8) : charset_(utf8::decode(charset_utf8)) {
  if (charset_.empty()) throw ConfigError("vocabulary charset is empty");
  for (std::size_t i = 0; i < charset_.size(); ++i) {
    const auto [it, inserted] = char_ids_.emplace(charset_[i], kNumSpecials + kCoordBins + static_cast<TokenId>(i));
    if (!inserted) throw ConfigError("duplicate character in charset: " + utf8::describe(charset_[i]));
  }
}

TokenId Vocab::coord(int bin) const {
  if (bin < 0 || bin >= kCoordBins) throw RangeError(fmt::format("coordinate bin {} outside [0, 999]", bin));
  return kNumSpecials + bin;
}

std::optional<TokenId> Vocab::find_char(char32_t cp) const {
  const auto it = char_ids_.find(cp);
  if (it == char_ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::char_id(char32_t cp) const {
  const auto id = find_char(cp);
  if (!id) throw InputError("character outside the vocabulary charset: " + utf8::describe(cp));
  return *id;
}

std::string Vocab::charset_utf8() const { return utf8::encode(charset_); }

std::string Vocab::token_string(TokenId id) const {
  if (id >= 0 && id < kNumSpecials) return std::string(kSpecialNames[id]);
  if (is_coord(id)) return fmt::format("<coord_{}>", coord_bin(id));
  if (is_char(id)) return utf8::encode(char_of(id));
  return fmt::format("<invalid_{}>", id);
}

std::string Vocab::serialize() const {
  std::ostringstream out;
  out << kFormatHeader << '\n' << "[specials]\n";
  for (auto name : kSpecialNames) out << name << '\n';
  out << "[coords]\n";
  for (int b = 0; b < kCoordBins; ++b) out << "<coord_" << b << ">\n";
  out << "[charset]\n";
  for (char32_t cp : charset_) {
    if (needs_escape(cp)) {
      out << fmt::format("U+{:04X}", static_cast<unsigned>(cp)) << '\n';
    } else {
      out << utf8::encode(cp) << '\n';
    }
  }
  return out.str();
}

Vocab Vocab::parse(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kFormatHeader) {
    throw ConfigError(fmt::format("vocabulary file must start with '{}'", kFormatHeader));
  }
  std::string section;
  std::size_t n_specials = 0;
  int n_coords = 0;
  std::u32string charset;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      section = std::string(line.substr(1, line.size() - 2));
      continue;
    }
    if (section == "specials") {
      if (n_specials >= std::size(kSpecialNames) || line != kSpecialNames[n_specials]) {
        throw ConfigError(fmt::format("vocabulary line {}: unexpected special token '{}'", i + 1, line));
      }
      ++n_specials;
    } else if (section == "coords") {
      if (line != fmt::format("<coord_{}>", n_coords)) {
        throw ConfigError(fmt::format("vocabulary line {}: unexpected coordinate token '{}'", i + 1, line));
      }
      ++n_coords;
    } else if (section == "charset") {
      if (line.size() > 2 && line.substr(0, 2) == "U+") {
        charset.push_back(static_cast<char32_t>(std::stoul(std::string(line.substr(2)), nullptr, 16)));
      } else {
        const auto cps = utf8::decode(line);
        if (cps.size() != 1) throw ConfigError(fmt::format("vocabulary line {}: expected one character", i + 1));
        charset.push_back(cps[0]);
      }
    } else {
      throw ConfigError(fmt::format("vocabulary line {}: content outside a known section", i + 1));
    }
  }
  if (n_specials != std::size(kSpecialNames)) throw ConfigError("vocabulary file: incomplete [specials]");
  if (n_coords != kCoordBins) throw ConfigError("vocabulary file: [coords] must list exactly 1000 bins");
  return Vocab(utf8::encode(charset));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  out << serialize();
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string Vocab::content_hash() const { return git_blob_hash(serialize()); }

std::string git_blob_hash(std::string_view content) {
  const std::string header = fmt::format("blob {}", content.size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size() + 1);  // includes the NUL
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace scob
