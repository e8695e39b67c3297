#include "scob/render/renderer.hpp"

#include <fmt/format.h>

#include <opencv2/core.hpp>
#include <opencv2/freetype.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include "scob/util/errors.hpp"
#include "scob/util/rng.hpp"
#include "scob/util/utf8.hpp"

namespace scob {
namespace {

// FreeType faces carry mutable state, so every thread keeps its own.
cv::freetype::FreeType2& rasterizer_for(const Font& font) {
  thread_local std::map<std::string, cv::Ptr<cv::freetype::FreeType2>> cache;
  const std::string key = font.path().string();
  auto it = cache.find(key);
  if (it == cache.end()) {
    auto ft = cv::freetype::createFreeType2();
    ft->loadFontData(key, 0);
    it = cache.emplace(key, std::move(ft)).first;
  }
  return *it->second;
}

struct InkBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive pixel bounds
  bool empty() const { return x1 < x0; }
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
};

InkBox ink_box(const cv::Mat& alpha) {
  InkBox b{alpha.cols, alpha.rows, -1, -1};
  for (int y = 0; y < alpha.rows; ++y) {
    const auto* row = alpha.ptr<std::uint8_t>(y);
    for (int x = 0; x < alpha.cols; ++x) {
      if (row[x]) {
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  if (b.x1 < 0) return InkBox{};
  return b;
}

// Coverage mask of a word plus the mask-space ink box of every character.
struct WordMask {
  cv::Mat alpha;  // CV_8UC1
  std::vector<InkBox> chars;
  // Pen cell per character (x range, mask space) for inkless glyphs.
  std::vector<std::pair<int, int>> cells;
};

WordMask rasterize_word(const Font& font, const std::u32string& text, int size) {
  auto& ft = rasterizer_for(font);
  const int pad = size;
  double total = 0;
  std::vector<double> pens;
  for (char32_t cp : text) {
    pens.push_back(total);
    total += font.advance(cp, size);
  }
  const int width = static_cast<int>(std::ceil(total)) + 2 * pad;
  const int height = static_cast<int>(std::ceil(font.line_height(size))) + 2 * pad;
  const int baseline = pad + static_cast<int>(std::lround(font.ascent(size)));

  WordMask mask;
  mask.alpha = cv::Mat::zeros(height, width, CV_8UC1);
  cv::Mat glyph_canvas;
  cv::Mat glyph_alpha;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int pen = static_cast<int>(std::lround(pens[i]));
    const int adv = static_cast<int>(std::ceil(font.advance(text[i], size)));
    mask.cells.emplace_back(pad + pen, pad + pen + std::max(adv, 1));
    // Glyphs may overhang their advance; give each its own padded window.
    const int win_x = pen;  // window origin in mask space
    const int win_w = std::min(width - win_x, adv + 2 * pad);
    glyph_canvas.create(height, win_w, CV_8UC3);
    glyph_canvas.setTo(cv::Scalar::all(0));
    ft.putText(glyph_canvas, utf8::encode(text[i]), cv::Point(pad, baseline), size,
               cv::Scalar::all(255), -1, cv::LINE_AA, true);
    cv::extractChannel(glyph_canvas, glyph_alpha, 0);
    InkBox b = ink_box(glyph_alpha);
    if (!b.empty()) {
      b.x0 += win_x;
      b.x1 += win_x;
      cv::Mat dst = mask.alpha(cv::Rect(win_x, 0, win_w, height));
      cv::max(dst, glyph_alpha, dst);
    }
    mask.chars.push_back(b);
  }
  return mask;
}

std::mutex g_pool_mutex;
std::map<std::string, std::shared_ptr<const FontPool>> g_pools;

std::shared_ptr<const FontPool> cached_pool(const std::filesystem::path& dir) {
  std::lock_guard lock(g_pool_mutex);
  const std::string key = std::filesystem::absolute(dir).lexically_normal().string();
  auto it = g_pools.find(key);
  if (it != g_pools.end()) return it->second;
  auto pool = std::make_shared<const FontPool>(FontPool::load(dir));
  g_pools.emplace(key, pool);
  return pool;
}

std::uint64_t fnv1a(std::uint64_t h, std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::kReal ? "real" : "synthetic"; }

Domain parse_domain(std::string_view s) {
  if (s == "real") return Domain::kReal;
  if (s == "synthetic") return Domain::kSynthetic;
  throw InputError(fmt::format("unknown domain '{}' (expected 'real' or 'synthetic')", s));
}

std::string default_charset() {
  std::string s;
  for (char c = 0x20; c < 0x7F; ++c) s.push_back(c);
  return s;
}

void RenderConfig::validate() const {
  if (resolution.lo < 32 || resolution.hi < resolution.lo) {
    throw ConfigError(fmt::format("resolution range [{}, {}] must satisfy 32 <= lo <= hi", resolution.lo,
                                  resolution.hi));
  }
  if (bg_rgb.lo < 0 || bg_rgb.hi > 255 || bg_rgb.hi < bg_rgb.lo) {
    throw ConfigError(fmt::format("background range [{}, {}] must lie within [0, 255]", bg_rgb.lo, bg_rgb.hi));
  }
  if (font_size.lo < 1 || font_size.hi < font_size.lo) {
    throw ConfigError(fmt::format("font size range [{}, {}] is invalid", font_size.lo, font_size.hi));
  }
  if (!(blur_max_radius >= 0)) throw ConfigError("blur_max_radius must be nonnegative");
  if (!(blur_prob >= 0 && blur_prob <= 1)) throw ConfigError("blur_prob must lie in [0, 1]");
  if (max_place_attempts < 1) throw ConfigError("max_place_attempts must be positive");
  if (clutter_rects.lo < 0 || clutter_rects.hi < clutter_rects.lo) throw ConfigError("invalid clutter_rects range");
  if (noise_amplitude < 0 || noise_amplitude > 255) throw ConfigError("noise_amplitude must lie in [0, 255]");
  if (charset.empty()) throw ConfigError("charset is empty");
  utf8::decode(charset);
}

Renderer::Renderer(RenderConfig config) : Renderer(config, nullptr) {}

Renderer::Renderer(RenderConfig config, std::shared_ptr<const FontPool> fonts)
    : config_(std::move(config)), fonts_(std::move(fonts)) {
  config_.validate();
  if (!fonts_) fonts_ = cached_pool(config_.font_dir);
  charset_ = utf8::decode(config_.charset);
}

void Renderer::check_charset(std::string_view word) const {
  for (char32_t cp : utf8::decode(word)) {
    if (charset_.find(cp) == std::u32string::npos) {
      throw InputError(fmt::format("character {} in word '{}' is outside the charset", utf8::describe(cp), word));
    }
  }
}

RenderedSample Renderer::render(const std::vector<std::string>& words, std::uint64_t seed) const {
  std::vector<std::u32string> texts;
  texts.reserve(words.size());
  for (const auto& w : words) {
    if (w.empty()) throw InputError("cannot render an empty word");
    check_charset(w);
    texts.push_back(utf8::decode(w));
  }

  Rng rng(seed);
  RenderedSample out;
  out.seed = seed;
  out.domain = Domain::kSynthetic;
  const int width = static_cast<int>(rng.uniform_int(config_.resolution.lo, config_.resolution.hi));
  const int height = static_cast<int>(rng.uniform_int(config_.resolution.lo, config_.resolution.hi));
  for (auto& c : out.background) c = static_cast<std::uint8_t>(rng.uniform_int(config_.bg_rgb.lo, config_.bg_rgb.hi));

  out.image = Image(width, height);
  for (int i = 0; i < width * height; ++i) {
    std::copy(out.background.begin(), out.background.end(), out.image.pixels.begin() + 3 * i);
  }

  const int rects = static_cast<int>(rng.uniform_int(config_.clutter_rects.lo, config_.clutter_rects.hi));
  for (int r = 0; r < rects; ++r) {
    int x0 = static_cast<int>(rng.uniform_int(0, width - 1));
    int x1 = static_cast<int>(rng.uniform_int(0, width - 1));
    int y0 = static_cast<int>(rng.uniform_int(0, height - 1));
    int y1 = static_cast<int>(rng.uniform_int(0, height - 1));
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    std::array<std::uint8_t, 3> color{};
    for (auto& c : color) c = static_cast<std::uint8_t>(rng.uniform_int(config_.bg_rgb.lo, config_.bg_rgb.hi));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) std::copy(color.begin(), color.end(), out.image.at(x, y));
    }
  }
  if (config_.noise_amplitude > 0) {
    const int amp = config_.noise_amplitude;
    for (auto& px : out.image.pixels) {
      px = static_cast<std::uint8_t>(std::clamp<std::int64_t>(px + rng.uniform_int(-amp, amp), 0, 255));
    }
  }

  std::vector<BBox> occupied;  // placement boxes of accepted words
  for (std::size_t wi = 0; wi < texts.size(); ++wi) {
    const auto& text = texts[wi];
    std::vector<std::size_t> eligible;
    for (std::size_t f = 0; f < fonts_->size(); ++f) {
      if ((*fonts_)[f].missing(text).empty()) eligible.push_back(f);
    }
    if (eligible.empty()) {
      std::string list;
      for (char32_t cp : (*fonts_)[0].missing(text)) list += (list.empty() ? "" : ", ") + utf8::describe(cp);
      throw InputError(fmt::format("no font in the pool covers word '{}' (missing {})", words[wi], list));
    }
    const Font& font = (*fonts_)[eligible[rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1)]];
    const int size = static_cast<int>(rng.uniform_int(config_.font_size.lo, config_.font_size.hi));
    std::array<int, 3> color{};
    for (auto& c : color) c = static_cast<int>(rng.uniform_int(0, 100));

    WordMask mask = rasterize_word(font, text, size);
    const InkBox ink = ink_box(mask.alpha);
    if (ink.empty() || ink.width() > width || ink.height() > height) continue;

    std::optional<std::pair<int, int>> origin;  // image position of the ink box corner
    for (int attempt = 0; attempt < config_.max_place_attempts; ++attempt) {
      const int x = static_cast<int>(rng.uniform_int(0, width - ink.width()));
      const int y = static_cast<int>(rng.uniform_int(0, height - ink.height()));
      const BBox candidate{double(x), double(y), double(x + ink.width()), double(y + ink.height())};
      if (std::none_of(occupied.begin(), occupied.end(), [&](const BBox& b) { return b.overlaps(candidate); })) {
        origin.emplace(x, y);
        occupied.push_back(candidate);
        break;
      }
    }
    if (!origin) continue;

    // Composite and record the pixels that actually changed.
    const int dx = origin->first - ink.x0;
    const int dy = origin->second - ink.y0;
    InkBox changed{width, height, -1, -1};
    for (int my = ink.y0; my <= ink.y1; ++my) {
      const auto* arow = mask.alpha.ptr<std::uint8_t>(my);
      for (int mx = ink.x0; mx <= ink.x1; ++mx) {
        const int a = arow[mx];
        if (!a) continue;
        std::uint8_t* px = out.image.at(mx + dx, my + dy);
        bool diff = false;
        for (int c = 0; c < 3; ++c) {
          const int v = (px[c] * (255 - a) + color[c] * a + 127) / 255;
          diff |= v != px[c];
          px[c] = static_cast<std::uint8_t>(v);
        }
        if (diff) {
          changed.x0 = std::min(changed.x0, mx + dx);
          changed.x1 = std::max(changed.x1, mx + dx);
          changed.y0 = std::min(changed.y0, my + dy);
          changed.y1 = std::max(changed.y1, my + dy);
        }
      }
    }
    if (changed.x1 < 0) continue;

    WordAnnotation ann;
    ann.text = words[wi];
    const BBox word_box{double(changed.x0), double(changed.y0), double(changed.x1 + 1), double(changed.y1 + 1)};
    ann.bbox = word_box;
    if (config_.char_boxes) {
      for (std::size_t ci = 0; ci < text.size(); ++ci) {
        BBox cb;
        const InkBox& b = mask.chars[ci];
        if (b.empty()) {
          cb = BBox{double(mask.cells[ci].first + dx), word_box.y_min, double(mask.cells[ci].second + dx),
                    word_box.y_max};
        } else {
          cb = BBox{double(b.x0 + dx), double(b.y0 + dy), double(b.x1 + 1 + dx), double(b.y1 + 1 + dy)};
        }
        cb.x_min = std::clamp(cb.x_min, word_box.x_min, word_box.x_max);
        cb.x_max = std::clamp(cb.x_max, word_box.x_min, word_box.x_max);
        cb.y_min = std::clamp(cb.y_min, word_box.y_min, word_box.y_max);
        cb.y_max = std::clamp(cb.y_max, word_box.y_min, word_box.y_max);
        ann.char_boxes.push_back(cb);
      }
    }
    out.words.push_back(std::move(ann));
  }

  if (rng.bernoulli(config_.blur_prob)) {
    const double radius = rng.uniform(0.0, config_.blur_max_radius);
    out.blur_radius = radius;
    if (radius > 0) {
      cv::Mat m(height, width, CV_8UC3, out.image.pixels.data());
      cv::GaussianBlur(m, m, cv::Size(0, 0), radius, radius, cv::BORDER_REPLICATE);
    }
  }
  return out;
}

RenderedSample render_sample(const std::vector<std::string>& words, const RenderConfig& config,
                             std::uint64_t seed) {
  config.validate();
  return Renderer(config, cached_pool(config.font_dir)).render(words, seed);
}

std::vector<std::string> random_words(const std::u32string& charset, IntRange word_count,
                                      IntRange word_length, Rng& rng) {
  std::u32string letters;
  for (char32_t c : charset) {
    if (c != U' ') letters.push_back(c);
  }
  if (letters.empty()) throw ConfigError("charset has no printable non-space character");
  std::vector<std::string> words(static_cast<std::size_t>(rng.uniform_int(word_count.lo, word_count.hi)));
  for (auto& w : words) {
    const auto len = rng.uniform_int(std::max(1, word_length.lo), std::max(1, word_length.hi));
    std::u32string cps;
    for (std::int64_t i = 0; i < len; ++i) {
      cps.push_back(letters[rng.uniform_int(0, static_cast<std::int64_t>(letters.size()) - 1)]);
    }
    w = utf8::encode(cps);
  }
  return words;
}

RenderStats bench_render(const RenderConfig& config, std::size_t n,
                         const std::optional<std::filesystem::path>& comparison_dir, std::uint64_t seed,
                         int threads) {
  if (n < 1) throw InputError("bench_render needs n >= 1");
  std::vector<std::filesystem::path> images;
  if (comparison_dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(*comparison_dir, ec)) {
      throw ConfigError("comparison directory does not exist: " + comparison_dir->string());
    }
    for (const auto& e : std::filesystem::recursive_directory_iterator(*comparison_dir)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) images.push_back(e.path());
    }
    if (images.empty()) throw ConfigError("comparison directory holds no image: " + comparison_dir->string());
    std::sort(images.begin(), images.end());
  }

  const Renderer renderer(config);
  const std::u32string charset = utf8::decode(config.charset);
  std::vector<std::uint64_t> hashes(n);
  std::vector<std::size_t> bytes(n);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      Rng word_rng = Rng::child(seed ^ 0x776f726473ULL, i);
      const auto words = random_words(charset, {1, 8}, {2, 10}, word_rng);
      const RenderedSample s = renderer.render(words, Rng::child(seed, i).next_u64());
      hashes[i] = fnv1a(0xcbf29ce484222325ULL, s.image.pixels);
      bytes[i] = s.image.pixels.size();
    }
  };
  const int workers = std::max(1, threads);
  const auto t0 = std::chrono::steady_clock::now();
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work, static_cast<std::size_t>(t), workers);
    for (auto& t : pool) t.join();
  }
  const double secs =
      std::max(1e-9, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  RenderStats stats;
  stats.samples = n;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto hv = hashes[i];
    h = fnv1a(h, std::span(reinterpret_cast<const std::uint8_t*>(&hv), sizeof hv));
    total += bytes[i];
  }
  stats.content_hash = h;
  stats.samples_per_sec = static_cast<double>(n) / secs;
  stats.bytes_per_sec = static_cast<double>(total) / secs;

  if (!images.empty()) {
    const auto l0 = std::chrono::steady_clock::now();
    std::size_t loaded_bytes = 0;
    for (const auto& p : images) loaded_bytes += read_png(p).pixels.size();
    const double lsecs =
        std::max(1e-9, std::chrono::duration<double>(std::chrono::steady_clock::now() - l0).count());
    stats.load_samples = images.size();
    stats.load_samples_per_sec = static_cast<double>(images.size()) / lsecs;
    stats.load_bytes_per_sec = static_cast<double>(loaded_bytes) / lsecs;
  }
  return stats;
}

}  // namespace scob
