// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <set>

#include "semrec/beam_search.hpp"
#include "semrec/codebook.hpp"
#include "semrec/indexstore.hpp"
#include "semrec/seqmodel.hpp"
#include "semrec/usm.hpp"

using namespace semrec;

namespace {

RowMatrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Codebook random_codebook(int levels, int codes, int dim, std::uint64_t seed) {
  Codebook cb(levels, codes, dim);
  const RowMatrix g = gaussian(1, cb.data().size(), seed);
  cb.data() = Eigen::Map<const Vector>(g.data(), g.size()) * 0.5;
  return cb;
}

SeqModelConfig model_config(int levels, int codes) {
  SeqModelConfig c;
  c.levels = levels;
  c.codes = codes;
  return c;  // defaults: 2 layers, d = 64, 4 heads
}

IndexMapping random_mapping(int n, int levels, int codes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, codes - 1);
  std::set<std::vector<int>> used;
  std::vector<std::string> items;
  std::vector<SemanticIndex> idx;
  while (static_cast<int>(items.size()) < n) {
    std::vector<int> c(static_cast<std::size_t>(levels));
    for (auto& x : c) x = pick(rng);
    if (!used.insert(c).second) continue;
    items.push_back("item" + std::to_string(items.size()));
    idx.push_back({c});
  }
  return IndexMapping(levels, codes, items, idx);
}

void BM_QuantizeBatch(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  const Codebook cb = random_codebook(4, K, 32, 1);
  const RowMatrix z = gaussian(1024, 32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_batch(z, cb));
  state.SetItemsProcessed(state.iterations() * z.rows());
}
BENCHMARK(BM_QuantizeBatch)->Arg(32)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Sinkhorn(benchmark::State& state) {
  const auto B = state.range(0), K = state.range(1);
  const RowMatrix cost = gaussian(B, K, 3).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn(cost, SinkhornOptions{.tolerance = 0.0}));
  state.SetLabel("100 iterations");
}
BENCHMARK(BM_Sinkhorn)->Args({64, 16})->Args({256, 256})->Args({1024, 256})->Unit(benchmark::kMillisecond);

void BM_ResolveConflicts(benchmark::State& state) {
  // Every item in a handful of prefixes, many sharing a last code.
  const int n = static_cast<int>(state.range(0)), K = 256;
  std::mt19937_64 rng(4);
  CodeMatrix codes(n, 4);
  for (int i = 0; i < n; ++i) {
    codes(i, 0) = i % 8;
    codes(i, 1) = 0;
    codes(i, 2) = 0;
    codes(i, 3) = static_cast<int>(rng() % 64);
  }
  const RowMatrix residuals = gaussian(n, 32, 5);
  const Codebook cb = random_codebook(1, K, 32, 6);
  for (auto _ : state) benchmark::DoNotOptimize(resolve_conflicts(codes, residuals, cb.level(0)));
}
BENCHMARK(BM_ResolveConflicts)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_DecodeStep(benchmark::State& state) {
  const SeqModel model = SeqModel::random(model_config(4, 256), 7);
  std::vector<int> prompt(static_cast<std::size_t>(state.range(0)), TokenVocab::kFirstIndex);
  prompt.front() = TokenVocab::kBos;
  for (auto _ : state) {
    state.PauseTiming();
    DecodeCache cache = model.new_cache();
    model.prefill(cache, prompt);
    state.ResumeTiming();
    benchmark::DoNotOptimize(model.decode_step(cache, TokenVocab::kFirstIndex + 1));
  }
}
BENCHMARK(BM_DecodeStep)->Arg(16)->Arg(80)->Unit(benchmark::kMicrosecond);

void BM_UncachedLogits(benchmark::State& state) {
  const SeqModel model = SeqModel::random(model_config(4, 256), 7);
  std::vector<int> tokens(static_cast<std::size_t>(state.range(0)), TokenVocab::kFirstIndex);
  tokens.front() = TokenVocab::kBos;
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(tokens));
}
BENCHMARK(BM_UncachedLogits)->Arg(16)->Arg(80)->Unit(benchmark::kMicrosecond);

void BM_BeamSearch(benchmark::State& state) {
  const int beam = static_cast<int>(state.range(0));
  const SeqModel model = SeqModel::random(model_config(4, 256), 8, 0.2);
  const IndexMapping mapping = random_mapping(1000, 4, 256, 9);
  const IndexTrie trie = IndexTrie::build(mapping);
  std::vector<SemanticIndex> history(mapping.indices().begin(), mapping.indices().begin() + 20);
  const auto prompt = encode_sequence(history, std::nullopt, model.vocab(), model.config().max_positions - 4);
  for (auto _ : state) benchmark::DoNotOptimize(constrained_beam_search(model, prompt, trie, beam));
  state.SetLabel("1000-item trie, 20-item history");
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_SeqModelGradient(benchmark::State& state) {
  const SeqModel model = SeqModel::random(model_config(4, 256), 10);
  std::vector<SeqExample> batch(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(11);
  for (auto& ex : batch) {
    ex.tokens.push_back(TokenVocab::kBos);
    for (int i = 0; i < 84; ++i) ex.tokens.push_back(TokenVocab::kFirstIndex + static_cast<int>(rng() % 1024));
    ex.target_start = 80;
  }
  Vector grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.nll(batch, &grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SeqModelGradient)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
