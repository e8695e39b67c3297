#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scob/render/font.hpp"
#include "scob/render/image.hpp"
#include "scob/util/geometry.hpp"

namespace scob {

enum class Domain { kSynthetic, kReal };

std::string to_string(Domain d);
Domain parse_domain(std::string_view s);  // throws InputError

// Printable ASCII, 0x20..0x7E.
std::string default_charset();

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

/// Online renderer settings. Defaults follow the pre-training renderer
/// (400..768 px sides, background 151..255 per channel, blur radius up to
/// 1.8 px applied with probability 0.2).
struct RenderConfig {
  IntRange resolution{400, 768};
  IntRange bg_rgb{151, 255};
  std::filesystem::path font_dir;
  IntRange font_size{24, 64};
  double blur_max_radius = 1.8;
  double blur_prob = 0.2;
  bool char_boxes = false;
  int max_place_attempts = 50;
  // Words may only use these characters (UTF-8).
  std::string charset = default_charset();
  // Clutter for the stand-in "real" domain: random filled rectangles and
  // per-pixel uniform noise of +-noise_amplitude. Zero disables both.
  IntRange clutter_rects{0, 0};
  int noise_amplitude = 0;

  // Throws ConfigError describing the first violated invariant. Font
  // loadability is checked when a Renderer is built.
  void validate() const;
};

struct WordAnnotation {
  std::string text;
  std::optional<BBox> bbox;
  std::vector<BBox> char_boxes;  // empty unless requested

  friend bool operator==(const WordAnnotation&, const WordAnnotation&) = default;
};

struct RenderedSample {
  Image image;
  std::vector<WordAnnotation> words;
  Domain domain = Domain::kSynthetic;
  std::uint64_t seed = 0;
  // Radius of the Gaussian blur applied after text placement; unset when the
  // blur coin came up tails.
  std::optional<double> blur_radius;
  // Sampled background colour (RGB).
  std::array<std::uint8_t, 3> background{};
};

/// Renderer bound to a configuration and a loaded font pool.
///
/// `render` is a pure function of (words, seed): the per-sample stream is
/// `Rng(seed)` and draws happen in a fixed order (size, background, clutter,
/// then per word font/size/colour/placement, then blur). Safe to call from
/// several threads at once.
class Renderer {
 public:
  explicit Renderer(RenderConfig config);
  Renderer(RenderConfig config, std::shared_ptr<const FontPool> fonts);

  const RenderConfig& config() const { return config_; }
  const FontPool& fonts() const { return *fonts_; }

  // Throws InputError for empty words or characters outside the charset.
  RenderedSample render(const std::vector<std::string>& words, std::uint64_t seed) const;

  // Throws InputError naming the first character outside the charset.
  void check_charset(std::string_view word) const;

 private:
  RenderConfig config_;
  std::shared_ptr<const FontPool> fonts_;
  std::u32string charset_;
};

// Convenience wrapper; font pools are cached per font_dir for the process.
RenderedSample render_sample(const std::vector<std::string>& words, const RenderConfig& config,
                             std::uint64_t seed);

struct RenderStats {
  std::size_t samples = 0;
  double samples_per_sec = 0;
  double bytes_per_sec = 0;  // raw RGB bytes produced per second
  std::optional<double> load_samples_per_sec;
  std::optional<double> load_bytes_per_sec;
  std::size_t load_samples = 0;
  // FNV-1a over every rendered raster, for determinism checks.
  std::uint64_t content_hash = 0;
};

/// Renders `n` samples with seeds child(seed, 0..n-1) and word lists drawn
/// from the charset, then optionally decodes every image in
/// `comparison_dir` from disk. Throws InputError for n < 1 and ConfigError
/// when the comparison directory is missing or holds no image.
RenderStats bench_render(const RenderConfig& config, std::size_t n,
                         const std::optional<std::filesystem::path>& comparison_dir,
                         std::uint64_t seed = 0, int threads = 1);

class Rng;

// Random words over the charset (space excluded) for the bench and the
// corpus generator.
std::vector<std::string> random_words(const std::u32string& charset, IntRange word_count,
                                      IntRange word_length, Rng& rng);

}  // namespace scob
