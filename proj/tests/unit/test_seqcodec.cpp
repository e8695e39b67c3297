#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "scob/seqcodec/codec.hpp"
#include "scob/seqcodec/vocab.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/rng.hpp"
#include "scob/util/utf8.hpp"
#include "support/test_support.hpp"

namespace scob {
namespace {

const Vocab& vocab() {
  static const Vocab v("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ");
  return v;
}

RenderedSample blank_sample(int w, int h, Domain domain = Domain::kSynthetic) {
  RenderedSample s;
  s.image = Image(w, h);
  s.domain = domain;
  return s;
}

WordAnnotation word(std::string text, BBox box) {
  WordAnnotation w;
  w.text = std::move(text);
  w.bbox = box;
  return w;
}

void check_shape(const TargetSequence& s, const Vocab& v) {
  ASSERT_EQ(s.input_ids.size(), s.size());
  ASSERT_EQ(s.loss_weights.size(), s.size());
  ASSERT_EQ(s.supcon_labels.size(), s.size());
  ASSERT_EQ(s.is_coord.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.supcon_labels[i] != kNoLabel, v.is_char(s.target_ids[i])) << i;
    if (s.supcon_labels[i] != kNoLabel) EXPECT_EQ(s.supcon_labels[i], v.char_class(s.target_ids[i]));
    if (s.loss_weights[i] == 0.0) EXPECT_TRUE(s.is_coord[i]);
  }
  // Teacher forcing shifts by one; a masked target coordinate shows up as
  // MASK in the following input slot.
  for (std::size_t i = 1; i < s.size(); ++i) {
    EXPECT_EQ(s.input_ids[i] == v.mask(), s.loss_weights[i - 1] == 0.0) << i;
    if (s.input_ids[i] != v.mask()) EXPECT_EQ(s.input_ids[i], s.target_ids[i - 1]);
  }
  EXPECT_TRUE(v.is_prompt(s.input_ids[0]));
}

TEST(Rng, SplitMixKnownAnswer) { EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL); }

TEST(Rng, ChildStreamsAreReproducibleAndDistinct) {
  Rng a = Rng::child(5, 0), b = Rng::child(5, 0), c = Rng::child(5, 1);
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  Rng d(9);
  const auto st = d.state();
  const auto y = d.next_u64();
  d.set_state(st);
  EXPECT_EQ(d.next_u64(), y);
}

TEST(Rng, UniformIntIsUnbiased) {
  Rng r(1);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.uniform_int(3, 9);
    ASSERT_GE(v, 3);
    ASSERT_LE(v, 9);
    ++counts[static_cast<std::size_t>(v - 3)];
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi2, 22.46);  // 6 dof, p = 0.001
  EXPECT_EQ(r.uniform_int(4, 4), 4);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  double sum = 0, sq = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.03);
}

TEST(Rng, PermutationIsAPermutation) {
  Rng r(3);
  auto p = r.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
  EXPECT_TRUE(r.permutation(0).empty());
}

TEST(Utf8, RoundTripAndErrors) {
  const std::string s = "A\xc3\xa9\xe4\xb8\xad\xf0\x9f\x98\x80";
  const auto cps = utf8::decode(s);
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps[1], U'é');
  EXPECT_EQ(cps[3], U'\U0001F600');
  EXPECT_EQ(utf8::encode(cps), s);
  EXPECT_THROW(utf8::decode("\xc3"), InputError);
  EXPECT_THROW(utf8::decode("\xff"), InputError);
  EXPECT_THROW(utf8::decode("\xc0\x80"), InputError);
  EXPECT_NE(utf8::describe(U'A').find("U+0041"), std::string::npos);
}

TEST(Vocab, IdSpacesAreDisjoint) {
  const Vocab& v = vocab();
  std::set<TokenId> seen{v.pad(), v.eos(), v.mask(), v.prompt_text_read(), v.prompt_ocr_read()};
  EXPECT_EQ(seen.size(), 5u);
  for (int b = 0; b < Vocab::kCoordBins; ++b) {
    const TokenId id = v.coord(b);
    EXPECT_TRUE(v.is_coord(id));
    EXPECT_FALSE(v.is_char(id));
    EXPECT_EQ(v.coord_bin(id), b);
    EXPECT_TRUE(seen.insert(id).second);
  }
  for (char32_t c : v.charset()) {
    const TokenId id = v.char_id(c);
    EXPECT_TRUE(v.is_char(id));
    EXPECT_FALSE(v.is_coord(id));
    EXPECT_EQ(v.char_of(id), c);
    EXPECT_TRUE(seen.insert(id).second);
  }
  EXPECT_EQ(static_cast<int>(seen.size()), v.size());
  EXPECT_THROW(v.coord(1000), RangeError);
  EXPECT_THROW(v.coord(-1), RangeError);
  EXPECT_THROW(v.char_id(U'a'), InputError);
}

TEST(Vocab, SerializeParseAndHash) {
  const Vocab v(std::string("AB \\\xc3\xa9"));
  const auto text = v.serialize();
  EXPECT_EQ(text.rfind(Vocab::kFormatHeader, 0), 0u);
  const Vocab back = Vocab::parse(text);
  EXPECT_TRUE(back == v);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(v.content_hash(), git_blob_hash(text));
  EXPECT_THROW(Vocab::parse("#scob-vocab v9\n"), ConfigError);
  EXPECT_THROW(Vocab::parse(""), ConfigError);
  EXPECT_THROW(Vocab("AA"), ConfigError);
  const auto dir = testing::scratch_dir("vocab");
  v.save(dir / "v.txt");
  EXPECT_TRUE(Vocab::load(dir / "v.txt") == v);
}

TEST(Vocab, GitBlobHashKnownAnswers) {
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Quantize, Examples) {
  EXPECT_EQ(quantize_coord(0, 768), 0);
  EXPECT_EQ(quantize_coord(768, 768), 999);
  EXPECT_EQ(quantize_coord(384, 768), 500);
  EXPECT_DOUBLE_EQ(dequantize_coord(0, 1000), 0.5);
  EXPECT_DOUBLE_EQ(dequantize_coord(999, 1000), 999.5);
  EXPECT_NEAR(dequantize_coord(500, 768), 384.384, 1e-9);
  EXPECT_THROW(quantize_coord(-0.1, 768), RangeError);
  EXPECT_THROW(quantize_coord(769, 768), RangeError);
  EXPECT_THROW(quantize_coord(1, 0), RangeError);
  EXPECT_THROW(dequantize_coord(1000, 768), RangeError);
}

TEST(Quantize, RoundTripWithinOneBin) {
  Rng r(11);
  for (int i = 0; i < 20000; ++i) {
    const double dim = r.uniform(1, 2000);
    const double v = i % 10 == 0 ? dim : r.uniform(0, dim);
    const int bin = quantize_coord(v, dim);
    ASSERT_GE(bin, 0);
    ASSERT_LE(bin, 999);
    ASSERT_EQ(bin, std::clamp(static_cast<int>(std::floor(1000.0 * v / dim)), 0, 999));
    ASSERT_LE(std::abs(dequantize_coord(bin, dim) - v), dim / 1000.0);
  }
}

TEST(RasterOrder, Examples) {
  EXPECT_TRUE(raster_order({}).empty());
  const std::vector<WordAnnotation> tie{word("A", {50, 10, 60, 20}), word("B", {10, 10, 20, 20})};
  EXPECT_EQ(raster_order(tie), (std::vector<std::size_t>{1, 0}));
  const std::vector<WordAnnotation> sorted{word("A", {0, 0, 5, 5}), word("B", {9, 0, 12, 5}), word("C", {0, 8, 5, 9})};
  EXPECT_EQ(raster_order(sorted), (std::vector<std::size_t>{0, 1, 2}));
  const std::vector<WordAnnotation> same{word("A", {1, 1, 2, 2}), word("B", {1, 1, 2, 2})};
  EXPECT_EQ(raster_order(same), (std::vector<std::size_t>{0, 1}));
  std::vector<WordAnnotation> boxless{word("A", {0, 0, 1, 1}), WordAnnotation{}};
  boxless[1].text = "B";
  EXPECT_THROW(raster_order(boxless), InputError);
}

TEST(EncodeOcrRead, EmptySample) {
  Rng r(0);
  const auto s = encode_ocr_read(blank_sample(100, 100), vocab(), WordOrder::kRaster, false, r, 40);
  EXPECT_EQ(s.target_ids, (std::vector<TokenId>{vocab().prompt_ocr_read(), vocab().eos()}));
  EXPECT_EQ(s.loss_weights, (std::vector<double>{1, 1}));
  check_shape(s, vocab());
}

TEST(EncodeOcrRead, SingleWordExample) {
  const Vocab& v = vocab();
  RenderedSample smp = blank_sample(1000, 1000);
  smp.words.push_back(word("AB", {10.2, 20.2, 30.2, 40.2}));
  Rng r(0);
  const auto s = encode_ocr_read(smp, v, WordOrder::kRaster, false, r, 40);
  const std::vector<TokenId> expected{v.prompt_ocr_read(), v.coord(10), v.coord(20), v.coord(30), v.coord(40),
                                      v.char_id(U'A'),     v.char_id(U'B'), v.eos()};
  EXPECT_EQ(s.target_ids, expected);
  EXPECT_EQ(s.loss_weights, std::vector<double>(8, 1.0));
  const std::vector<int> labels{kNoLabel, kNoLabel, kNoLabel, kNoLabel, kNoLabel, v.char_class(v.char_id(U'A')),
                                v.char_class(v.char_id(U'B')), kNoLabel};
  EXPECT_EQ(s.supcon_labels, labels);
  check_shape(s, v);

  smp.domain = Domain::kReal;
  Rng r2(0);
  const auto weak = encode_ocr_read(smp, v, WordOrder::kRaster, true, r2, 40);
  EXPECT_EQ(weak.target_ids, expected);
  EXPECT_EQ(weak.loss_weights, (std::vector<double>{1, 0, 0, 0, 0, 1, 1, 1}));
  for (std::size_t i = 2; i <= 5; ++i) EXPECT_EQ(weak.input_ids[i], v.mask());
  EXPECT_EQ(weak.input_ids[0], v.prompt_ocr_read());
  check_shape(weak, v);

  smp.domain = Domain::kSynthetic;
  Rng r3(0);
  const auto weak_syn = encode_ocr_read(smp, v, WordOrder::kRaster, true, r3, 40);
  EXPECT_EQ(weak_syn, s);
}

TEST(EncodeOcrRead, WeakTargetIdentity) {
  const Vocab& v = vocab();
  Rng wr(4);
  for (int trial = 0; trial < 50; ++trial) {
    RenderedSample smp = blank_sample(200, 150, Domain::kReal);
    const int n = static_cast<int>(wr.uniform_int(0, 4));
    for (int k = 0; k < n; ++k) {
      const double x = wr.uniform(0, 150), y = wr.uniform(0, 100);
      smp.words.push_back(word(std::string(static_cast<std::size_t>(wr.uniform_int(1, 4)), 'A' + static_cast<char>(k)),
                               {x, y, x + wr.uniform(1, 50), y + wr.uniform(1, 50)}));
    }
    for (WordOrder order : {WordOrder::kRaster, WordOrder::kRandom}) {
      Rng a(static_cast<std::uint64_t>(trial)), b(static_cast<std::uint64_t>(trial));
      const auto full = encode_ocr_read(smp, v, order, false, a, 40);
      const auto weak = encode_ocr_read(smp, v, order, true, b, 40);
      EXPECT_EQ(full.target_ids, weak.target_ids);
      EXPECT_EQ(full.supcon_labels, weak.supcon_labels);
      EXPECT_EQ(full.word_order, weak.word_order);
      check_shape(full, v);
      check_shape(weak, v);
      for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(weak.loss_weights[i], full.is_coord[i] ? 0.0 : 1.0);
        if (i == 0 || !full.is_coord[i - 1]) EXPECT_EQ(weak.input_ids[i], full.input_ids[i]);
      }
    }
  }
}

TEST(EncodeOcrRead, BoxlessRealWordsUnderWeakSupervision) {
  const Vocab& v = vocab();
  RenderedSample smp = blank_sample(100, 100, Domain::kReal);
  WordAnnotation w;
  w.text = "HI";
  smp.words.push_back(w);
  Rng r(0);
  const auto s = encode_ocr_read(smp, v, WordOrder::kRandom, true, r, 40);
  ASSERT_EQ(s.size(), 8u);
  EXPECT_EQ(s.loss_weights, (std::vector<double>{1, 0, 0, 0, 0, 1, 1, 1}));
  check_shape(s, v);
  Rng r2(0);
  EXPECT_THROW(encode_ocr_read(smp, v, WordOrder::kRandom, false, r2, 40), InputError);
  smp.domain = Domain::kSynthetic;
  EXPECT_THROW(encode_ocr_read(smp, v, WordOrder::kRandom, true, r2, 40), InputError);
}

TEST(EncodeOcrRead, TruncatesAtWordBoundaries) {
  const Vocab& v = vocab();
  RenderedSample smp = blank_sample(100, 100);
  for (int k = 0; k < 5; ++k) smp.words.push_back(word("ABC", {10.0 * k, 0, 10.0 * k + 5, 5}));
  for (std::size_t max_len = 2; max_len <= 40; ++max_len) {
    Rng r(0);
    const auto s = encode_ocr_read(smp, v, WordOrder::kRaster, false, r, max_len);
    ASSERT_LE(s.size(), max_len);
    EXPECT_EQ(s.size(), 2 + 7 * std::min<std::size_t>(5, (max_len - 2) / 7));
    EXPECT_EQ(s.target_ids.back(), v.eos());
    EXPECT_EQ(s.word_order.size(), (s.size() - 2) / 7);
    const auto d = decode_ocr_read(s.target_ids, v, 100, 100);
    EXPECT_TRUE(d.diagnostics.empty());
    EXPECT_EQ(d.words.size(), s.word_order.size());
  }
  Rng r(0);
  EXPECT_THROW(encode_ocr_read(smp, v, WordOrder::kRaster, false, r, 1), RangeError);
}

TEST(EncodeOcrRead, OutOfCharsetIsAnError) {
  RenderedSample smp = blank_sample(100, 100);
  smp.words.push_back(word("Ab", {0, 0, 5, 5}));
  Rng r(0);
  try {
    encode_ocr_read(smp, vocab(), WordOrder::kRaster, false, r, 40);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("U+0062"), std::string::npos) << e.what();
  }
}

TEST(EncodeOcrRead, RandomOrderIsAPermutationDrawnFromTheStream) {
  RenderedSample smp = blank_sample(100, 100);
  for (int k = 0; k < 4; ++k) smp.words.push_back(word(std::string(1, static_cast<char>('A' + k)), {10.0 * k, 0, 10.0 * k + 5, 5}));
  std::set<std::vector<std::size_t>> orders;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng r(seed);
    const auto s = encode_ocr_read(smp, vocab(), WordOrder::kRandom, false, r, 40);
    Rng again(seed);
    EXPECT_EQ(encode_ocr_read(smp, vocab(), WordOrder::kRandom, false, again, 40), s);
    orders.insert(s.word_order);
  }
  EXPECT_GT(orders.size(), 10u);
  Rng r(0);
  EXPECT_EQ(encode_ocr_read(smp, vocab(), WordOrder::kGiven, false, r, 40).word_order,
            (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(EncodeTextRead, Examples) {
  const Vocab& v = vocab();
  const auto empty = encode_text_read(blank_sample(50, 50), v, 40);
  EXPECT_EQ(empty.target_ids, (std::vector<TokenId>{v.prompt_text_read(), v.eos()}));
  RenderedSample one = blank_sample(50, 50);
  one.words.push_back(word("HI", {0, 0, 5, 5}));
  const auto hi = encode_text_read(one, v, 40);
  EXPECT_EQ(hi.target_ids, (std::vector<TokenId>{v.prompt_text_read(), v.char_id(U'H'), v.char_id(U'I'), v.eos()}));
  RenderedSample two = blank_sample(200, 200);
  two.words.push_back(word("A", {0, 100, 5, 110}));
  two.words.push_back(word("B", {50, 5, 60, 15}));
  const auto ba = encode_text_read(two, v, 40);
  EXPECT_EQ(decode_text_read(ba.target_ids, v), "B A");
  for (const auto* s : {&empty, &hi, &ba}) {
    EXPECT_EQ(s->loss_weights, std::vector<double>(s->size(), 1.0));
    EXPECT_TRUE(std::none_of(s->is_coord.begin(), s->is_coord.end(), [](auto c) { return c != 0; }));
    check_shape(*s, v);
  }
  const Vocab nospace("AB");
  RenderedSample ab = blank_sample(200, 200);
  ab.words.push_back(word("A", {0, 0, 5, 5}));
  ab.words.push_back(word("B", {50, 0, 60, 5}));
  EXPECT_THROW(encode_text_read(ab, nospace, 40), ConfigError);
}

TEST(EncodeTextRead, TruncatesAtWordBoundaries) {
  RenderedSample smp = blank_sample(100, 100);
  for (int k = 0; k < 3; ++k) smp.words.push_back(word("ABC", {10.0 * k, 0, 10.0 * k + 5, 5}));
  EXPECT_EQ(decode_text_read(encode_text_read(smp, vocab(), 9).target_ids, vocab()), "ABC ABC");
  EXPECT_EQ(decode_text_read(encode_text_read(smp, vocab(), 8).target_ids, vocab()), "ABC");
  EXPECT_EQ(decode_text_read(encode_text_read(smp, vocab(), 4).target_ids, vocab()), "");
}

TEST(DecodeOcrRead, RoundTripOnRenderedSamples) {
  const auto v = Vocab("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789");
  RenderConfig cfg;
  cfg.font_dir = testing::font_dir();
  cfg.resolution = {96, 160};
  cfg.charset = v.charset_utf8();
  const Renderer renderer(cfg);
  Rng wr(8);
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto s = renderer.render(random_words(v.charset(), {1, 3}, {1, 5}, wr), seed);
    Rng r(seed);
    const auto seq = encode_ocr_read(s, v, WordOrder::kRaster, false, r, 200);
    const auto d = decode_ocr_read(seq.target_ids, v, s.image.width, s.image.height);
    EXPECT_TRUE(d.diagnostics.empty());
    ASSERT_EQ(d.words.size(), s.words.size());
    const auto order = raster_order(s.words);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& src = s.words[order[k]];
      EXPECT_EQ(d.words[k].text, src.text);
      const double w = s.image.width, h = s.image.height;
      EXPECT_LE(std::abs(d.words[k].box.x_min - src.bbox->x_min), w / 1000.0);
      EXPECT_LE(std::abs(d.words[k].box.x_max - src.bbox->x_max), w / 1000.0);
      EXPECT_LE(std::abs(d.words[k].box.y_min - src.bbox->y_min), h / 1000.0);
      EXPECT_LE(std::abs(d.words[k].box.y_max - src.bbox->y_max), h / 1000.0);
      EXPECT_DOUBLE_EQ(d.words[k].box.x_min, dequantize_coord(quantize_coord(src.bbox->x_min, w), w));
    }
  }
}

TEST(DecodeOcrRead, MalformedSequences) {
  const Vocab& v = vocab();
  EXPECT_TRUE(decode_ocr_read(std::vector<TokenId>{v.prompt_ocr_read(), v.eos()}, v, 100, 100).words.empty());
  const std::vector<TokenId> three{v.prompt_ocr_read(), v.coord(1), v.coord(2), v.coord(3), v.char_id(U'A'),
                                   v.char_id(U'B'), v.eos()};
  const auto d = decode_ocr_read(three, v, 100, 100);
  EXPECT_TRUE(d.words.empty());
  ASSERT_EQ(d.diagnostics.size(), 1u);
  EXPECT_LT(d.diagnostics[0].begin, d.diagnostics[0].end);
  // A group without characters is dropped; the next group still parses.
  const std::vector<TokenId> bare{v.coord(1), v.coord(2), v.coord(3), v.coord(4), v.eos()};
  EXPECT_TRUE(decode_ocr_read(bare, v, 1000, 1000).words.empty());
  EXPECT_EQ(decode_ocr_read(bare, v, 1000, 1000).diagnostics.size(), 1u);
  const std::vector<TokenId> two{v.coord(1), v.coord(2), v.coord(3), v.coord(4), v.pad(), v.coord(5), v.coord(6),
                                 v.coord(7), v.coord(8), v.char_id(U'Z'), v.eos()};
  const auto e = decode_ocr_read(two, v, 1000, 1000);
  ASSERT_EQ(e.words.size(), 1u);
  EXPECT_EQ(e.words[0].text, "Z");
  EXPECT_DOUBLE_EQ(e.words[0].box.x_min, 5.5);
  EXPECT_DOUBLE_EQ(e.words[0].box.y_max, 8.5);
  EXPECT_FALSE(e.diagnostics.empty());
  // Tokens after EOS are ignored; garbage ids do not throw.
  const std::vector<TokenId> junk{v.pad(), v.mask(), 99999, -3, v.eos(), v.coord(1)};
  EXPECT_NO_THROW(decode_ocr_read(junk, v, 10, 10));
  EXPECT_TRUE(decode_ocr_read(junk, v, 10, 10).words.empty());
}

TEST(JoinRaster, OrdersDecodedWords) {
  const std::vector<DecodedWord> words{{{50, 10, 60, 20}, "B"}, {{0, 10, 5, 20}, "A"}, {{0, 0, 5, 5}, "C"}};
  EXPECT_EQ(join_raster(words), "C A B");
  EXPECT_EQ(join_raster({}), "");
}

}  // namespace
}  // namespace scob
