#include "scob/config/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>

#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/utf8.hpp"

namespace scob {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view what, std::string_view v) {
  throw ConfigError(fmt::format("expected {}, got '{}'", what, v));
}

template <typename I>
I parse_integer(std::string_view v) {
  v = trim(v);
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value("an integer", v);
  return out;
}

double parse_double(std::string_view v) {
  v = trim(v);
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) bad_value("a finite number", v);
  return out;
}

bool parse_bool(std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value("a boolean (true/false)", v);
}

IntRange parse_range(std::string_view v) {
  const auto comma = v.find(',');
  if (comma == std::string_view::npos) {
    const int x = parse_integer<int>(v);
    return {x, x};
  }
  return {parse_integer<int>(v.substr(0, comma)), parse_integer<int>(v.substr(comma + 1))};
}

std::string fmt_double(double d) { return fmt::format("{}", d); }
std::string fmt_range(IntRange r) { return fmt::format("{},{}", r.lo, r.hi); }

using Getter = std::function<std::string(const TrainConfig&)>;
using Setter = std::function<void(TrainConfig&, std::string_view)>;

struct Registry {
  std::vector<ConfigKey> keys;

  void add(std::string key, std::string help, Getter g, Setter s) {
    keys.push_back({std::move(key), std::move(help), std::move(g), std::move(s)});
  }

  template <typename Field>
  void integer(std::string key, std::string help, Field field) {
    add(std::move(key), std::move(help), [field](const TrainConfig& c) { return std::to_string(field(const_cast<TrainConfig&>(c))); },
        [field](TrainConfig& c, std::string_view v) {
          auto& ref = field(c);
          ref = parse_integer<std::remove_reference_t<decltype(ref)>>(v);
        });
  }
  template <typename Field>
  void real(std::string key, std::string help, Field field) {
    add(std::move(key), std::move(help), [field](const TrainConfig& c) { return fmt_double(field(const_cast<TrainConfig&>(c))); },
        [field](TrainConfig& c, std::string_view v) { field(c) = parse_double(v); });
  }
  template <typename Field>
  void boolean(std::string key, std::string help, Field field) {
    add(std::move(key), std::move(help),
        [field](const TrainConfig& c) { return std::string(field(const_cast<TrainConfig&>(c)) ? "true" : "false"); },
        [field](TrainConfig& c, std::string_view v) { field(c) = parse_bool(v); });
  }
  template <typename Field>
  void range(std::string key, std::string help, Field field) {
    add(std::move(key), std::move(help), [field](const TrainConfig& c) { return fmt_range(field(const_cast<TrainConfig&>(c))); },
        [field](TrainConfig& c, std::string_view v) { field(c) = parse_range(v); });
  }
  template <typename Field>
  void path(std::string key, std::string help, Field field) {
    add(std::move(key), std::move(help), [field](const TrainConfig& c) { return field(const_cast<TrainConfig&>(c)).string(); },
        [field](TrainConfig& c, std::string_view v) { field(c) = std::filesystem::path(std::string(trim(v))); });
  }

  // Keys for one RenderConfig reached through `get`.
  template <typename Get>
  void render(const std::string& prefix, const std::string& what, Get get) {
    range(prefix + ".resolution", "image side range in pixels (lo,hi) for " + what,
          [get](TrainConfig& c) -> IntRange& { return get(c).resolution; });
    range(prefix + ".bg_rgb", "background value range per channel (lo,hi) for " + what,
          [get](TrainConfig& c) -> IntRange& { return get(c).bg_rgb; });
    path(prefix + ".font_dir", "font directory for " + what + " (empty: render.font_dir)",
         [get](TrainConfig& c) -> std::filesystem::path& { return get(c).font_dir; });
    range(prefix + ".font_size", "font size range in pixels (lo,hi) for " + what,
          [get](TrainConfig& c) -> IntRange& { return get(c).font_size; });
    real(prefix + ".blur_max_radius", "maximum Gaussian blur radius for " + what,
         [get](TrainConfig& c) -> double& { return get(c).blur_max_radius; });
    real(prefix + ".blur_prob", "probability of blurring a sample for " + what,
         [get](TrainConfig& c) -> double& { return get(c).blur_prob; });
    boolean(prefix + ".char_boxes", "emit per-character boxes for " + what,
            [get](TrainConfig& c) -> bool& { return get(c).char_boxes; });
    integer(prefix + ".max_place_attempts", "placement attempts per word for " + what,
            [get](TrainConfig& c) -> int& { return get(c).max_place_attempts; });
    range(prefix + ".clutter_rects", "number of clutter rectangles (lo,hi) for " + what,
          [get](TrainConfig& c) -> IntRange& { return get(c).clutter_rects; });
    integer(prefix + ".noise_amplitude", "per-pixel uniform noise amplitude for " + what,
            [get](TrainConfig& c) -> int& { return get(c).noise_amplitude; });
  }

  template <typename Get>
  void source(const std::string& prefix, const std::string& what, Get get) {
    real(prefix + ".ratio", "fraction of originals drawn from the " + what + " domain",
         [get](TrainConfig& c) -> double& { return get(c).ratio; });
    path(prefix + ".manifest", "JSON Lines manifest for the " + what + " domain (empty: generate)",
         [get](TrainConfig& c) -> std::filesystem::path& { return get(c).manifest; });
    range(prefix + ".word_count", "words per generated " + what + " sample (lo,hi)",
          [get](TrainConfig& c) -> IntRange& { return get(c).word_count; });
    range(prefix + ".word_length", "characters per generated " + what + " word (lo,hi)",
          [get](TrainConfig& c) -> IntRange& { return get(c).word_length; });
    boolean(prefix + ".boxes", "keep word boxes of generated " + what + " samples",
            [get](TrainConfig& c) -> bool& { return get(c).boxes; });
    render(prefix + ".render", "generated " + what + " samples",
           [get](TrainConfig& c) -> RenderConfig& { return get(c).render; });
  }
};

Registry build_registry() {
  Registry r;
  r.integer("train.steps", "number of optimization steps", [](TrainConfig& c) -> int& { return c.steps; });
  r.integer("train.batch_size", "originals per step", [](TrainConfig& c) -> int& { return c.batch_size; });
  r.real("train.lr_peak", "peak learning rate", [](TrainConfig& c) -> double& { return c.lr_peak; });
  r.real("train.warmup_fraction", "fraction of steps spent in linear warmup",
         [](TrainConfig& c) -> double& { return c.warmup_fraction; });
  r.real("train.grad_clip", "global gradient norm limit (0 disables)", [](TrainConfig& c) -> double& { return c.grad_clip; });
  r.real("train.adam_beta1", "Adam first-moment decay", [](TrainConfig& c) -> double& { return c.adam_beta1; });
  r.real("train.adam_beta2", "Adam second-moment decay", [](TrainConfig& c) -> double& { return c.adam_beta2; });
  r.real("train.adam_eps", "Adam epsilon", [](TrainConfig& c) -> double& { return c.adam_eps; });
  r.integer("train.seed", "seed for parameters and data streams", [](TrainConfig& c) -> std::uint64_t& { return c.seed; });
  r.add("train.task", "text_read or ocr_read", [](const TrainConfig& c) { return to_string(c.task); },
        [](TrainConfig& c, std::string_view v) { c.task = parse_task(trim(v)); });
  r.add("train.mode", "vanilla, supcon_only, render_only, scob or scob_full_annotation",
        [](const TrainConfig& c) { return to_string(c.mode); },
        [](TrainConfig& c, std::string_view v) { c.mode = parse_train_mode(trim(v)); });
  r.add("train.word_order", "auto, raster or random (OCR-read word order)",
        [](const TrainConfig& c) { return to_string(c.word_order); },
        [](TrainConfig& c, std::string_view v) { c.word_order = parse_order_policy(trim(v)); });
  r.integer("train.checkpoint_every", "checkpoint period in steps (0: final only)",
            [](TrainConfig& c) -> int& { return c.checkpoint_every; });
  r.integer("train.log_every", "metrics period in steps", [](TrainConfig& c) -> int& { return c.log_every; });
  r.integer("train.threads", "worker threads for batch preparation", [](TrainConfig& c) -> int& { return c.threads; });
  r.add("vocab.charset", "printable_ascii, upper_digits or literal:<chars> (escapes \\s \\\\ \\uXXXX)",
        [](const TrainConfig& c) { return charset_to_spec(c.charset); },
        [](TrainConfig& c, std::string_view v) { c.charset = charset_from_spec(trim(v)); });
  r.real("loss.tau", "SupCon temperature", [](TrainConfig& c) -> double& { return c.loss.tau; });
  r.real("loss.lambda", "SupCon weight", [](TrainConfig& c) -> double& { return c.loss.lambda; });

  r.integer("model.image_side", "square input side in pixels", [](TrainConfig& c) -> int& { return c.model.image_side; });
  r.integer("model.patch_size", "patch side in pixels", [](TrainConfig& c) -> int& { return c.model.patch_size; });
  r.integer("model.encoder_dim", "encoder width", [](TrainConfig& c) -> int& { return c.model.encoder_dim; });
  r.integer("model.encoder_layers", "encoder blocks", [](TrainConfig& c) -> int& { return c.model.encoder_layers; });
  r.integer("model.encoder_heads", "encoder attention heads", [](TrainConfig& c) -> int& { return c.model.encoder_heads; });
  r.boolean("model.encoder_position_embedding", "learned patch position embedding",
            [](TrainConfig& c) -> bool& { return c.model.encoder_position_embedding; });
  r.integer("model.decoder_dim", "decoder width", [](TrainConfig& c) -> int& { return c.model.decoder_dim; });
  r.integer("model.decoder_layers", "decoder blocks", [](TrainConfig& c) -> int& { return c.model.decoder_layers; });
  r.integer("model.decoder_heads", "decoder attention heads", [](TrainConfig& c) -> int& { return c.model.decoder_heads; });
  r.integer("model.mlp_ratio", "MLP hidden width as a multiple of the block width",
            [](TrainConfig& c) -> int& { return c.model.mlp_ratio; });
  r.integer("model.max_len", "maximum sequence length", [](TrainConfig& c) -> int& { return c.model.max_len; });
  r.integer("model.projector_hidden", "projector hidden width", [](TrainConfig& c) -> int& { return c.model.projector_hidden; });
  r.integer("model.projector_out", "projector output width", [](TrainConfig& c) -> int& { return c.model.projector_out; });

  r.render("render", "rendered partner views", [](TrainConfig& c) -> RenderConfig& { return c.render; });
  r.source("data.synthetic", "synthetic", [](TrainConfig& c) -> SourceConfig& { return c.synthetic; });
  r.source("data.real", "real", [](TrainConfig& c) -> SourceConfig& { return c.real; });

  r.real("augment.max_rotation_deg", "photometric view: maximum rotation in degrees",
         [](TrainConfig& c) -> double& { return c.augment.max_rotation_deg; });
  r.real("augment.max_scale_delta", "photometric view: maximum relative rescale",
         [](TrainConfig& c) -> double& { return c.augment.max_scale_delta; });
  r.real("augment.color_jitter", "photometric view: brightness/contrast jitter",
         [](TrainConfig& c) -> double& { return c.augment.color_jitter; });
  r.real("augment.gray_prob", "photometric view: grayscale probability",
         [](TrainConfig& c) -> double& { return c.augment.gray_prob; });
  r.real("augment.blur_prob", "photometric view: blur probability",
         [](TrainConfig& c) -> double& { return c.augment.blur_prob; });
  r.real("augment.blur_max_radius", "photometric view: maximum blur radius",
         [](TrainConfig& c) -> double& { return c.augment.blur_max_radius; });
  return r;
}

const ConfigKey& find_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return k;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_registry().keys;
  return keys;
}

void set_config_value(TrainConfig& config, std::string_view key, std::string_view value) {
  const auto& k = find_key(key);
  try {
    k.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

std::string get_config_value(const TrainConfig& config, std::string_view key) { return find_key(key).get(config); }

std::vector<std::pair<std::string, std::string>> config_snapshot(const TrainConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.key, k.get(config));
  return out;
}

void apply_config_text(TrainConfig& config, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", origin, line_no, line));
    }
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  }
  apply_config_text(config, text, path.string());
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_snapshot(config)) out += fmt::format("{} = {}\n", k, v);
  return out;
}

namespace {

std::string upper_digits() {
  std::string s = " ";
  for (char c = 'A'; c <= 'Z'; ++c) s.push_back(c);
  for (char c = '0'; c <= '9'; ++c) s.push_back(c);
  return s;
}

}  // namespace

std::string charset_from_spec(std::string_view spec) {
  if (spec == "printable_ascii") return default_charset();
  if (spec == "upper_digits") return upper_digits();
  constexpr std::string_view kLiteral = "literal:";
  if (spec.substr(0, kLiteral.size()) != kLiteral) {
    throw ConfigError(fmt::format("unknown charset '{}' (printable_ascii, upper_digits or literal:<chars>)", spec));
  }
  const std::u32string raw = utf8::decode(spec.substr(kLiteral.size()));
  std::u32string out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != U'\\') {
      out.push_back(raw[i]);
      continue;
    }
    if (i + 1 >= raw.size()) throw ConfigError("charset literal ends with a lone backslash");
    const char32_t e = raw[++i];
    if (e == U's') {
      out.push_back(U' ');
    } else if (e == U'\\') {
      out.push_back(U'\\');
    } else if (e == U'u' && i + 4 < raw.size()) {
      char32_t cp = 0;
      for (int k = 0; k < 4; ++k) {
        const char32_t h = raw[++i];
        cp <<= 4;
        if (h >= U'0' && h <= U'9') cp |= h - U'0';
        else if (h >= U'a' && h <= U'f') cp |= h - U'a' + 10;
        else if (h >= U'A' && h <= U'F') cp |= h - U'A' + 10;
        else throw ConfigError("bad \\u escape in charset literal");
      }
      out.push_back(cp);
    } else {
      throw ConfigError("unknown escape in charset literal (use \\s, \\\\ or \\uXXXX)");
    }
  }
  if (out.empty()) throw ConfigError("charset literal is empty");
  return utf8::encode(out);
}

std::string charset_to_spec(std::string_view charset) {
  if (charset == default_charset()) return "printable_ascii";
  if (charset == upper_digits()) return "upper_digits";
  std::string out = "literal:";
  for (char32_t cp : utf8::decode(charset)) {
    if (cp == U' ') out += "\\s";
    else if (cp == U'\\') out += "\\\\";
    else if (cp < 0x20 || cp == 0x7F) out += fmt::format("\\u{:04X}", static_cast<unsigned>(cp));
    else out += utf8::encode(std::u32string(1, cp));
  }
  return out;
}

TrainConfig desk_config() {
  TrainConfig c;
  c.charset = upper_digits();
  c.steps = 5000;
  c.batch_size = 4;
  c.lr_peak = 1e-3;
  c.model = ModelConfig{};
  c.model.max_len = 40;

  RenderConfig clean;
  clean.resolution = {128, 128};
  clean.font_size = {14, 22};
  clean.blur_max_radius = 0.8;
  clean.blur_prob = 0.2;
  clean.max_place_attempts = 50;
  c.render = clean;

  c.synthetic.ratio = 0.5;
  c.synthetic.render = clean;
  c.synthetic.word_count = {1, 3};
  c.synthetic.word_length = {2, 5};

  RenderConfig cluttered = clean;
  cluttered.bg_rgb = {151, 255};
  cluttered.clutter_rects = {2, 5};
  cluttered.noise_amplitude = 24;
  c.real.ratio = 0.5;
  c.real.render = cluttered;
  c.real.word_count = {1, 3};
  c.real.word_length = {2, 5};
  return c;
}

}  // namespace scob
