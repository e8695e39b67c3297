#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scob/render/renderer.hpp"
#include "scob/seqcodec/vocab.hpp"
#include "scob/util/geometry.hpp"

namespace scob {

class Rng;

inline constexpr int kNoLabel = -1;

/// Teacher-forcing view of one target sequence.
///
/// `target_ids` is the full sequence starting with the task prompt.
/// `input_ids[0]` is the prompt and `input_ids[i] = target_ids[i - 1]` for
/// i > 0, except that masked coordinates are fed as MASK. All per-position
/// vectors share one length.
struct TargetSequence {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<double> loss_weights;
  std::vector<int> supcon_labels;  // character class, or kNoLabel
  std::vector<std::uint8_t> is_coord;
  // Index into the source sample's word list for every emitted word.
  std::vector<std::size_t> word_order;

  std::size_t size() const { return target_ids.size(); }
  friend bool operator==(const TargetSequence&, const TargetSequence&) = default;
};

enum class WordOrder {
  kRaster,  // stable sort by (y_min, x_min)
  kRandom,  // fresh permutation from the supplied stream
  kGiven,   // annotation order
};

std::string to_string(WordOrder o);
WordOrder parse_word_order(std::string_view s);

/// Bin index for a pixel coordinate: clamp(floor(1000 * v / dim), 0, 999).
/// Throws RangeError when v is outside [0, dim] or dim <= 0.
int quantize_coord(double v, double dim);

/// Bin centre: (bin + 0.5) * dim / 1000. Throws RangeError for bins
/// outside [0, 999] or dim <= 0.
double dequantize_coord(int bin, double dim);

/// Stable permutation sorting words by (y_min, x_min). Throws InputError
/// when a word has no box.
std::vector<std::size_t> raster_order(std::span<const WordAnnotation> words);

/// OCR-read target: prompt, then per word four coordinate tokens
/// (x_min, y_min, x_max, y_max) followed by its characters, then EOS.
/// Trailing whole words are dropped to fit max_len.
///
/// With `weak` set, coordinates of real-domain samples are fed as MASK and
/// get zero loss weight; their targets keep the (unused) coordinate ids when
/// boxes exist and MASK otherwise. Throws InputError when boxes are needed
/// but missing or a character is outside the vocabulary.
TargetSequence encode_ocr_read(const RenderedSample& sample, const Vocab& vocab, WordOrder order, bool weak,
                               Rng& rng, std::size_t max_len);

/// Text-read target: prompt, then the words joined by single spaces, then
/// EOS. Words are taken in raster order when every word has a box and in
/// annotation order otherwise. All weights are 1.
TargetSequence encode_text_read(const RenderedSample& sample, const Vocab& vocab, std::size_t max_len);

struct DecodedWord {
  BBox box;
  std::string text;
  friend bool operator==(const DecodedWord&, const DecodedWord&) = default;
};

// Half-open token index range that the parser skipped, with a reason.
struct DecodeDiagnostic {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string reason;
};

struct DecodeResult {
  std::vector<DecodedWord> words;
  std::vector<DecodeDiagnostic> diagnostics;
};

/// Greedy inverse of encode_ocr_read. Never throws on malformed input: a run
/// of exactly four coordinate tokens opens a word, characters accumulate up
/// to the next coordinate or EOS, and anything that does not fit this shape
/// is reported as a skipped span.
DecodeResult decode_ocr_read(std::span<const TokenId> ids, const Vocab& vocab, double width, double height);

// Characters of a text-read sequence between the prompt and EOS.
std::string decode_text_read(std::span<const TokenId> ids, const Vocab& vocab);

// Words sorted by (y_min, x_min) of their boxes and joined by spaces.
std::string join_raster(const std::vector<DecodedWord>& words);

}  // namespace scob
