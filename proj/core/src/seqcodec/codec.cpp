#include "scob/seqcodec/codec.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scob/util/errors.hpp"
#include "scob/util/rng.hpp"
#include "scob/util/utf8.hpp"

namespace scob {
namespace {

struct Builder {
  TargetSequence seq;

  void push(TokenId target, double weight, int label, bool coord) {
    seq.target_ids.push_back(target);
    seq.loss_weights.push_back(weight);
    seq.supcon_labels.push_back(label);
    seq.is_coord.push_back(coord ? 1 : 0);
  }

  // Shifted decoder inputs; masked coordinates are fed as MASK.
  void finish(TokenId prompt, TokenId mask, bool mask_coords) {
    const std::size_t n = seq.target_ids.size();
    seq.input_ids.resize(n);
    seq.input_ids[0] = prompt;
    for (std::size_t i = 1; i < n; ++i) {
      const bool masked = mask_coords && seq.is_coord[i - 1];
      seq.input_ids[i] = masked ? mask : seq.target_ids[i - 1];
    }
  }
};

std::vector<TokenId> char_ids(const std::string& text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (char32_t cp : utf8::decode(text)) {
    const auto id = vocab.find_char(cp);
    if (!id) throw InputError(fmt::format("character {} in word '{}' is outside the vocabulary", utf8::describe(cp), text));
    ids.push_back(*id);
  }
  return ids;
}

void check_max_len(std::size_t max_len) {
  if (max_len < 2) throw RangeError("max_len must allow at least the prompt and EOS");
}

}  // namespace

std::string to_string(WordOrder o) {
  switch (o) {
    case WordOrder::kRaster: return "raster";
    case WordOrder::kRandom: return "random";
    case WordOrder::kGiven: return "given";
  }
  return "raster";
}

WordOrder parse_word_order(std::string_view s) {
  if (s == "raster") return WordOrder::kRaster;
  if (s == "random") return WordOrder::kRandom;
  if (s == "given") return WordOrder::kGiven;
  throw ConfigError(fmt::format("unknown word order '{}' (expected raster, random or given)", s));
}

int quantize_coord(double v, double dim) {
  if (!(dim > 0)) throw RangeError(fmt::format("quantize_coord: dimension must be positive, got {}", dim));
  if (!(v >= 0 && v <= dim)) throw RangeError(fmt::format("quantize_coord: {} outside [0, {}]", v, dim));
  const double bin = std::floor(Vocab::kCoordBins * v / dim);
  return static_cast<int>(std::clamp(bin, 0.0, double(Vocab::kCoordBins - 1)));
}

double dequantize_coord(int bin, double dim) {
  if (bin < 0 || bin >= Vocab::kCoordBins) throw RangeError(fmt::format("dequantize_coord: bin {} outside [0, 999]", bin));
  if (!(dim > 0)) throw RangeError(fmt::format("dequantize_coord: dimension must be positive, got {}", dim));
  return (bin + 0.5) * dim / Vocab::kCoordBins;
}

std::vector<std::size_t> raster_order(std::span<const WordAnnotation> words) {
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!words[i].bbox) throw InputError(fmt::format("raster order needs boxes; word {} ('{}') has none", i, words[i].text));
  }
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const BBox& ba = *words[a].bbox;
    const BBox& bb = *words[b].bbox;
    if (ba.y_min != bb.y_min) return ba.y_min < bb.y_min;
    return ba.x_min < bb.x_min;
  });
  return order;
}

TargetSequence encode_ocr_read(const RenderedSample& sample, const Vocab& vocab, WordOrder order, bool weak,
                               Rng& rng, std::size_t max_len) {
  check_max_len(max_len);
  const bool mask_coords = weak && sample.domain == Domain::kReal;
  const auto& words = sample.words;
  std::vector<std::vector<TokenId>> chars;
  chars.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!mask_coords && !words[i].bbox) {
      throw InputError(fmt::format("OCR-read with coordinate supervision needs a box for word {} ('{}')", i,
                                   words[i].text));
    }
    chars.push_back(char_ids(words[i].text, vocab));
  }

  std::vector<std::size_t> perm;
  switch (order) {
    case WordOrder::kRaster: perm = raster_order(words); break;
    case WordOrder::kRandom: perm = rng.permutation(words.size()); break;
    case WordOrder::kGiven:
      perm.resize(words.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      break;
  }

  const double w = sample.image.width;
  const double h = sample.image.height;
  Builder b;
  b.push(vocab.prompt_ocr_read(), 1.0, kNoLabel, false);
  for (std::size_t idx : perm) {
    if (b.seq.target_ids.size() + 4 + chars[idx].size() + 1 > max_len) break;
    const double coord_weight = mask_coords ? 0.0 : 1.0;
    if (const auto& box = words[idx].bbox) {
      b.push(vocab.coord(quantize_coord(std::clamp(box->x_min, 0.0, w), w)), coord_weight, kNoLabel, true);
      b.push(vocab.coord(quantize_coord(std::clamp(box->y_min, 0.0, h), h)), coord_weight, kNoLabel, true);
      b.push(vocab.coord(quantize_coord(std::clamp(box->x_max, 0.0, w), w)), coord_weight, kNoLabel, true);
      b.push(vocab.coord(quantize_coord(std::clamp(box->y_max, 0.0, h), h)), coord_weight, kNoLabel, true);
    } else {
      for (int k = 0; k < 4; ++k) b.push(vocab.mask(), coord_weight, kNoLabel, true);
    }
    for (TokenId id : chars[idx]) b.push(id, 1.0, vocab.char_class(id), false);
    b.seq.word_order.push_back(idx);
  }
  b.push(vocab.eos(), 1.0, kNoLabel, false);
  b.finish(vocab.prompt_ocr_read(), vocab.mask(), mask_coords);
  return std::move(b.seq);
}

TargetSequence encode_text_read(const RenderedSample& sample, const Vocab& vocab, std::size_t max_len) {
  check_max_len(max_len);
  const auto& words = sample.words;
  std::vector<std::vector<TokenId>> chars;
  for (const auto& wd : words) chars.push_back(char_ids(wd.text, vocab));

  const bool all_boxed = std::all_of(words.begin(), words.end(), [](const WordAnnotation& a) { return a.bbox.has_value(); });
  std::vector<std::size_t> perm;
  if (all_boxed) {
    perm = raster_order(words);
  } else {
    perm.resize(words.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
  }

  std::optional<TokenId> space;
  if (words.size() > 1) {
    space = vocab.find_char(U' ');
    if (!space) throw ConfigError("text-read needs the space character in the vocabulary charset");
  }

  Builder b;
  b.push(vocab.prompt_text_read(), 1.0, kNoLabel, false);
  for (std::size_t idx : perm) {
    const std::size_t sep = b.seq.word_order.empty() ? 0 : 1;
    if (b.seq.target_ids.size() + sep + chars[idx].size() + 1 > max_len) break;
    if (sep) b.push(*space, 1.0, vocab.char_class(*space), false);
    for (TokenId id : chars[idx]) b.push(id, 1.0, vocab.char_class(id), false);
    b.seq.word_order.push_back(idx);
  }
  b.push(vocab.eos(), 1.0, kNoLabel, false);
  b.finish(vocab.prompt_text_read(), vocab.mask(), false);
  return std::move(b.seq);
}

DecodeResult decode_ocr_read(std::span<const TokenId> ids, const Vocab& vocab, double width, double height) {
  DecodeResult result;
  std::size_t i = 0;
  while (i < ids.size() && vocab.is_prompt(ids[i])) ++i;

  auto skip = [&](std::size_t begin, std::size_t end, std::string reason) {
    if (end > begin) result.diagnostics.push_back({begin, end, std::move(reason)});
  };

  while (i < ids.size() && ids[i] != vocab.eos()) {
    const TokenId id = ids[i];
    if (vocab.is_coord(id)) {
      const std::size_t run_begin = i;
      while (i < ids.size() && vocab.is_coord(ids[i])) ++i;
      const std::size_t run = i - run_begin;
      std::u32string text;
      const std::size_t chars_begin = i;
      while (i < ids.size() && vocab.is_char(ids[i])) text.push_back(vocab.char_of(ids[i++]));
      if (run != 4) {
        skip(run_begin, i, fmt::format("coordinate group of {} tokens (expected 4)", run));
        continue;
      }
      if (text.empty()) {
        skip(run_begin, chars_begin, "word without characters");
        continue;
      }
      DecodedWord word;
      word.box = BBox{dequantize_coord(vocab.coord_bin(ids[run_begin]), width),
                      dequantize_coord(vocab.coord_bin(ids[run_begin + 1]), height),
                      dequantize_coord(vocab.coord_bin(ids[run_begin + 2]), width),
                      dequantize_coord(vocab.coord_bin(ids[run_begin + 3]), height)};
      word.text = utf8::encode(text);
      result.words.push_back(std::move(word));
    } else if (vocab.is_char(id)) {
      const std::size_t begin = i;
      while (i < ids.size() && vocab.is_char(ids[i])) ++i;
      skip(begin, i, "characters outside any word");
    } else {
      skip(i, i + 1, fmt::format("unexpected token {}", vocab.token_string(id)));
      ++i;
    }
  }
  return result;
}

std::string decode_text_read(std::span<const TokenId> ids, const Vocab& vocab) {
  std::u32string text;
  for (TokenId id : ids) {
    if (id == vocab.eos()) break;
    if (vocab.is_char(id)) text.push_back(vocab.char_of(id));
  }
  return utf8::encode(text);
}

std::string join_raster(const std::vector<DecodedWord>& words) {
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (words[a].box.y_min != words[b].box.y_min) return words[a].box.y_min < words[b].box.y_min;
    return words[a].box.x_min < words[b].box.x_min;
  });
  std::string out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k) out.push_back(' ');
    out += words[order[k]].text;
  }
  return out;
}

}  // namespace scob
