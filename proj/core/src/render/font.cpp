#include "scob/render/font.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "scob/util/errors.hpp"
#include "scob/util/utf8.hpp"

namespace scob {
namespace {

// Big-endian readers with bounds checks.
struct Reader {
  const std::vector<std::uint8_t>& bytes;

  void need(std::size_t off, std::size_t n) const {
    if (off + n > bytes.size()) throw ConfigError("truncated font table");
  }
  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return static_cast<std::uint16_t>((bytes[off] << 8) | bytes[off + 1]);
  }
  std::int16_t i16(std::size_t off) const { return static_cast<std::int16_t>(u16(off)); }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    return (static_cast<std::uint32_t>(bytes[off]) << 24) | (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[off + 2]) << 8) | bytes[off + 3];
  }
};

struct TableDirectory {
  std::uint32_t head = 0, hhea = 0, hmtx = 0, cmap = 0, post = 0;
};

TableDirectory read_directory(const Reader& r) {
  const std::uint32_t version = r.u32(0);
  if (version != 0x00010000 && version != 0x4F54544F /* OTTO */ && version != 0x74727565 /* true */) {
    throw ConfigError("not a TrueType/OpenType font");
  }
  TableDirectory dir;
  const std::uint16_t num_tables = r.u16(4);
  for (std::uint16_t i = 0; i < num_tables; ++i) {
    const std::size_t rec = 12 + 16 * static_cast<std::size_t>(i);
    const std::uint32_t tag = r.u32(rec);
    const std::uint32_t offset = r.u32(rec + 8);
    switch (tag) {
      case 0x68656164: dir.head = offset; break;  // head
      case 0x68686561: dir.hhea = offset; break;  // hhea
      case 0x686D7478: dir.hmtx = offset; break;  // hmtx
      case 0x636D6170: dir.cmap = offset; break;  // cmap
      case 0x706F7374: dir.post = offset; break;  // post
      default: break;
    }
  }
  if (!dir.head || !dir.hhea || !dir.hmtx || !dir.cmap) throw ConfigError("font lacks head/hhea/hmtx/cmap");
  return dir;
}

std::uint32_t lookup_format4(const Reader& r, std::uint32_t table, char32_t cp) {
  if (cp > 0xFFFF) return 0;
  const std::uint16_t seg_count = r.u16(table + 6) / 2;
  const std::size_t end_codes = table + 14;
  const std::size_t start_codes = end_codes + 2 * seg_count + 2;
  const std::size_t id_deltas = start_codes + 2 * seg_count;
  const std::size_t id_range_offsets = id_deltas + 2 * seg_count;
  // Segments are sorted by end code.
  std::size_t lo = 0, hi = seg_count;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (r.u16(end_codes + 2 * mid) < cp) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  if (lo == seg_count) return 0;
  const std::uint16_t start = r.u16(start_codes + 2 * lo);
  if (cp < start) return 0;
  const std::uint16_t delta = r.u16(id_deltas + 2 * lo);
  const std::size_t range_addr = id_range_offsets + 2 * lo;
  const std::uint16_t range_offset = r.u16(range_addr);
  if (range_offset == 0) return static_cast<std::uint16_t>(cp + delta);
  const std::uint16_t g = r.u16(range_addr + range_offset + 2 * (cp - start));
  return g == 0 ? 0 : static_cast<std::uint16_t>(g + delta);
}

std::uint32_t lookup_format12(const Reader& r, std::uint32_t table, char32_t cp) {
  const std::uint32_t groups = r.u32(table + 12);
  std::size_t lo = 0, hi = groups;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    const std::size_t rec = table + 16 + 12 * mid;
    if (r.u32(rec + 4) < cp) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  if (lo == groups) return 0;
  const std::size_t rec = table + 16 + 12 * lo;
  const std::uint32_t start = r.u32(rec);
  if (cp < start) return 0;
  return r.u32(rec + 8) + (cp - start);
}

bool is_font_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ttf" || ext == ".otf";
}

}  // namespace

Font Font::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open font: " + path.string());
  auto bytes = std::make_shared<std::vector<std::uint8_t>>(std::istreambuf_iterator<char>(in),
                                                           std::istreambuf_iterator<char>());
  Font font;
  font.path_ = path;
  font.data_ = bytes;
  const Reader r{*bytes};
  try {
    const TableDirectory dir = read_directory(r);
    font.units_per_em_ = r.u16(dir.head + 18);
    if (font.units_per_em_ == 0) throw ConfigError("unitsPerEm is zero");
    font.ascender_ = r.i16(dir.hhea + 4);
    font.descender_ = r.i16(dir.hhea + 6);
    font.num_hmetrics_ = r.u16(dir.hhea + 34);
    if (font.num_hmetrics_ == 0) throw ConfigError("no horizontal metrics");
    font.hmtx_offset_ = dir.hmtx;
    r.need(dir.hmtx, 4 * static_cast<std::size_t>(font.num_hmetrics_));

    // Prefer full-repertoire Unicode (format 12), then BMP (format 4).
    const std::uint16_t num_subtables = r.u16(dir.cmap + 2);
    int best_rank = -1;
    for (std::uint16_t i = 0; i < num_subtables; ++i) {
      const std::size_t rec = dir.cmap + 4 + 8 * static_cast<std::size_t>(i);
      const std::uint16_t platform = r.u16(rec);
      const std::uint16_t encoding = r.u16(rec + 2);
      const std::uint32_t off = dir.cmap + r.u32(rec + 4);
      const std::uint16_t format = r.u16(off);
      const bool unicode = platform == 0 || (platform == 3 && (encoding == 1 || encoding == 10));
      if (!unicode) continue;
      int rank = -1;
      if (format == 12) rank = 2;
      if (format == 4) rank = 1;
      if (rank > best_rank) {
        best_rank = rank;
        font.cmap_offset_ = off;
        font.cmap_format_ = format;
      }
    }
    if (best_rank < 0) throw ConfigError("no Unicode cmap subtable");

    if (dir.post) font.monospace_ = r.u32(dir.post + 12) != 0;
    if (!font.monospace_) {
      // isFixedPitch is not always set; compare the printable ASCII advances.
      double first = -1;
      bool same = true;
      for (char32_t c = 0x21; c < 0x7F && same; ++c) {
        if (!font.has_glyph(c)) continue;
        const double a = font.advance(c, font.units_per_em_);
        if (first < 0) first = a;
        same = a == first;
      }
      font.monospace_ = same && first > 0;
    }
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("unusable font {}: {}", path.string(), e.what()));
  }
  return font;
}

std::uint32_t Font::glyph_index(char32_t cp) const {
  const Reader r{*data_};
  try {
    return cmap_format_ == 12 ? lookup_format12(r, cmap_offset_, cp) : lookup_format4(r, cmap_offset_, cp);
  } catch (const ConfigError&) {
    return 0;
  }
}

double Font::advance(char32_t cp, double size_px) const {
  const Reader r{*data_};
  std::uint32_t g = glyph_index(cp);
  if (g >= num_hmetrics_) g = num_hmetrics_ - 1u;
  const std::uint16_t units = r.u16(hmtx_offset_ + 4 * static_cast<std::size_t>(g));
  return units * size_px / units_per_em_;
}

std::u32string Font::missing(std::u32string_view text) const {
  std::u32string out;
  for (char32_t cp : text) {
    if (!has_glyph(cp) && out.find(cp) == std::u32string::npos) out.push_back(cp);
  }
  return out;
}

TextExtent glyph_extent(std::string_view text, const Font& font, double size_px) {
  if (text.empty()) throw InputError("glyph_extent: empty text");
  if (!(size_px > 0)) throw RangeError(fmt::format("glyph_extent: size must be positive, got {}", size_px));
  const std::u32string cps = utf8::decode(text);
  const std::u32string missing = font.missing(cps);
  if (!missing.empty()) {
    std::string list;
    for (char32_t cp : missing) list += (list.empty() ? "" : ", ") + utf8::describe(cp);
    throw InputError(fmt::format("font {} has no glyph for {}", font.name(), list));
  }
  double width = 0;
  for (char32_t cp : cps) width += font.advance(cp, size_px);
  TextExtent e;
  e.width = std::max(1, static_cast<int>(std::lround(width)));
  e.height = std::max(1, static_cast<int>(std::lround(font.line_height(size_px))));
  return e;
}

FontPool FontPool::load(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw ConfigError("font_dir is not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> paths;
  for (auto it = std::filesystem::recursive_directory_iterator(dir, ec);
       !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_regular_file() && is_font_file(it->path())) paths.push_back(it->path());
  }
  std::sort(paths.begin(), paths.end());
  FontPool pool;
  for (const auto& p : paths) {
    try {
      pool.fonts_.push_back(Font::load(p));
    } catch (const ConfigError&) {
      // Unloadable files are skipped; an empty pool is reported below.
    }
  }
  if (pool.fonts_.empty()) throw ConfigError("no loadable font in font_dir: " + dir.string());
  return pool;
}

}  // namespace scob
