#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace scob {

/// An immutable TrueType/OpenType font.
///
/// Only the tables needed for layout are read here (head, hhea, hmtx, maxp,
/// post, cmap). Rasterization goes through FreeType via the renderer; the
/// handle itself holds no mutable state and can be shared across threads.
class Font {
 public:
  // Throws ConfigError when the file cannot be read or lacks a usable
  // cmap/hmtx.
  static Font load(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }
  std::string name() const { return path_.stem().string(); }
  bool monospace() const { return monospace_; }

  // 0 when the font has no glyph for `cp`.
  std::uint32_t glyph_index(char32_t cp) const;
  bool has_glyph(char32_t cp) const { return glyph_index(cp) != 0; }

  // Metrics in pixels for a font rendered at `size_px` pixels per em.
  double advance(char32_t cp, double size_px) const;
  double ascent(double size_px) const { return ascender_ * size_px / units_per_em_; }
  double descent(double size_px) const { return -descender_ * size_px / units_per_em_; }
  double line_height(double size_px) const { return ascent(size_px) + descent(size_px); }

  // Codepoints of `text` the font cannot draw, in order of first occurrence.
  std::u32string missing(std::u32string_view text) const;

 private:
  Font() = default;

  std::filesystem::path path_;
  std::shared_ptr<const std::vector<std::uint8_t>> data_;
  std::uint32_t cmap_offset_ = 0;  // absolute offset of the chosen subtable
  std::uint16_t cmap_format_ = 0;
  std::uint32_t hmtx_offset_ = 0;
  std::uint16_t num_hmetrics_ = 0;
  std::uint16_t units_per_em_ = 1000;
  std::int16_t ascender_ = 0;
  std::int16_t descender_ = 0;
  bool monospace_ = false;
};

struct TextExtent {
  int width = 0;
  int height = 0;
};

/// Advance-based extent of `text` at `size_px`: the summed advance widths
/// (no kerning) and the font's ascent + descent, rounded to whole pixels.
/// Throws InputError for empty text or missing glyphs (listing the missing
/// codepoints) and RangeError for size_px <= 0.
TextExtent glyph_extent(std::string_view text, const Font& font, double size_px);

/// Every loadable font below a directory, sorted by path.
class FontPool {
 public:
  // Throws ConfigError naming the directory when it does not exist or holds
  // no loadable font.
  static FontPool load(const std::filesystem::path& dir);

  const std::vector<Font>& fonts() const { return fonts_; }
  std::size_t size() const { return fonts_.size(); }
  const Font& operator[](std::size_t i) const { return fonts_[i]; }

 private:
  std::vector<Font> fonts_;
};

}  // namespace scob
