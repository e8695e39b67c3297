#include <benchmark/benchmark.h>

#include "scob/config/config.hpp"
#include "scob/objectives/losses.hpp"
#include "scob/seqcodec/codec.hpp"
#include "scob/trainer/trainer.hpp"

namespace {

using namespace scob;

TrainConfig bench_config(TrainMode mode) {
  TrainConfig c = desk_config();
  c.render.font_dir = SCOB_BENCH_FONTS;
  c.mode = mode;
  return c;
}

RenderConfig desk_render() {
  TrainConfig c = bench_config(TrainMode::kScob);
  RenderConfig r = c.real.render;
  r.font_dir = c.render.font_dir;
  r.charset = c.charset;
  return r;
}

void BM_RenderDesk(benchmark::State& state) {
  const Renderer renderer(desk_render());
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(renderer.render({"SCOB", "42", "OCR"}, seed++));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RenderDesk);

void BM_RenderFullSize(benchmark::State& state) {
  RenderConfig r;
  r.font_dir = SCOB_BENCH_FONTS;
  const Renderer renderer(r);
  Rng words_rng(1);
  const auto words = random_words(U"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz", {4, 8}, {3, 9}, words_rng);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(renderer.render(words, seed++));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RenderFullSize)->Unit(benchmark::kMillisecond);

void BM_EncodeDecodeOcrRead(benchmark::State& state) {
  const RenderedSample s = Renderer(desk_render()).render({"SCOB", "42", "OCR"}, 3);
  const Vocab vocab(desk_config().charset);
  Rng rng(0);
  for (auto _ : state) {
    const auto seq = encode_ocr_read(s, vocab, WordOrder::kRaster, false, rng, 64);
    benchmark::DoNotOptimize(decode_ocr_read(seq.target_ids, vocab, s.image.width, s.image.height));
  }
}
BENCHMARK(BM_EncodeDecodeOcrRead);

void BM_SupConLoss(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(7);
  nn::Matrix<double> z(n, 128);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  z.rowwise().normalize();
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, 7));
  nn::Matrix<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(supcon_loss<double>(z, labels, 0.07, &grad));
  state.SetComplexityN(n);
}
BENCHMARK(BM_SupConLoss)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oNSquared);

void BM_TokenLoss(benchmark::State& state) {
  Rng rng(3);
  nn::Matrix<double> logits(64, 1042);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  std::vector<TokenId> targets(64);
  for (auto& t : targets) t = static_cast<TokenId>(rng.uniform_int(0, 1041));
  const std::vector<double> weights(64, 1.0);
  nn::Matrix<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(token_loss<double>(logits, targets, weights, &grad));
}
BENCHMARK(BM_TokenLoss);

void BM_TrainStep(benchmark::State& state, TrainMode mode) {
  const TrainConfig c = bench_config(mode);
  const Vocab vocab = make_vocab(c);
  const DataSampler sampler(c);
  RenderConfig rc = c.render;
  rc.charset = c.charset;
  const Renderer renderer(rc);
  Model<float> model(resolved_model_config(c, vocab), 0);
  Adam adam(model.parameters(), c.adam_beta1, c.adam_beta2, c.adam_eps);
  int step = 0;
  for (auto _ : state) {
    state.PauseTiming();
    const auto batch = make_step_batch(sampler, renderer, vocab, c, step);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train_step(model, adam, batch, c, step % c.steps));
    ++step;
  }
}
BENCHMARK_CAPTURE(BM_TrainStep, vanilla, TrainMode::kVanilla)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, scob, TrainMode::kScob)->Unit(benchmark::kMillisecond);

void BM_StepBatch(benchmark::State& state) {
  const TrainConfig c = bench_config(TrainMode::kScob);
  const Vocab vocab = make_vocab(c);
  const DataSampler sampler(c);
  RenderConfig rc = c.render;
  rc.charset = c.charset;
  const Renderer renderer(rc);
  int step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_step_batch(sampler, renderer, vocab, c, step++));
}
BENCHMARK(BM_StepBatch)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
