// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "recgen_oracle.hpp"
#include "semrec/beam_search.hpp"
#include "semrec/corpus.hpp"
#include "semrec/errors.hpp"
#include "semrec/recgen.hpp"

using namespace semrec;
using testing::exhaustive_scores;
using testing::lively_model;

namespace {

SeqModelConfig small_config(int levels, int codes, int dim = 8) {
  SeqModelConfig c;
  c.levels = levels;
  c.codes = codes;
  c.layers = 2;
  c.dim = dim;
  c.heads = 2;
  c.max_positions = 32;
  c.ffn_mult = 2;
  return c;
}

std::vector<int> random_prompt(const SeqModel& m, std::mt19937_64& rng, const IndexMapping& mapping) {
  std::uniform_int_distribution<std::size_t> pick(0, mapping.size() - 1);
  std::uniform_int_distribution<int> len(1, 5);
  std::vector<SemanticIndex> history;
  for (int n = len(rng); n > 0; --n) history.push_back(mapping.indices()[pick(rng)]);
  return encode_sequence(history, std::nullopt, m.vocab(), m.config().max_positions - m.vocab().levels());
}

// Small clustered corpus whose index is (cluster, rank within cluster).
struct Toy {
  LooSplit split;
  IndexMapping mapping;
};

Toy toy_corpus(std::uint64_t seed) {
  SynthConfig sc;
  sc.n_users = 150;
  sc.n_items = 40;
  sc.n_clusters = 4;
  sc.interactions_per_user = 10;
  sc.d_emb = 8;
  sc.seed = seed;
  const SynthCorpus c = synth_corpus(sc);
  std::map<int, int> next;
  std::vector<std::string> items;
  std::vector<SemanticIndex> idx;
  for (std::size_t i = 0; i < c.items.size(); ++i) {
    const int cl = c.cluster_of_item[i];
    items.push_back(c.items[i].item_id);
    idx.push_back({{cl, next[cl]++}});
  }
  int codes = 4;
  for (const auto& [cl, n] : next) codes = std::max(codes, n);
  return {leave_one_out(build_sequences(five_core_filter(c.interactions), 20)), IndexMapping(2, codes, items, idx)};
}

RecTrainConfig toy_train_config(int epochs) {
  RecTrainConfig cfg;
  cfg.model = small_config(2, 4, 16);
  cfg.model.layers = 1;
  cfg.model.max_positions = 40;
  cfg.epochs = epochs;
  cfg.batch = 16;
  cfg.lr = 3e-3;
  cfg.max_items = 10;
  cfg.init_std = 0.05;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("beam search equals exhaustive scoring when the beam covers every live prefix") {
  std::mt19937_64 rng(101);
  int compared = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const bool deep = trial % 2 == 1;
    const int H = deep ? 3 : 2, K = deep ? 8 : 16;
    const auto cfg = small_config(H, K);
    const SeqModel m = lively_model(cfg, 1000 + static_cast<std::uint64_t>(trial));
    // Two levels with K <= 20 first codes, or three levels with <= 20 live 2-prefixes.
    const auto mapping = deep ? testing::narrow_mapping(rng, 48, H, K, 20) : testing::random_mapping(rng, 64, H, K);
    const auto trie = IndexTrie::build(mapping);
    const auto prompt = random_prompt(m, rng, mapping);

    const auto beam = constrained_beam_search(m, prompt, trie, 20);
    const auto all = exhaustive_scores(m, prompt, trie);
    REQUIRE(beam.size() == 20);
    for (std::size_t r = 0; r < beam.size(); ++r) {
      CHECK(beam[r].index.codes == all[r].codes);
      CHECK(std::abs(beam[r].logprob - all[r].logprob) < 1e-6);
      ++compared;
    }
  }
  CHECK(compared == 600);
}

TEST_CASE("beam search on unrestricted random tries is reported against exhaustive scoring") {
  // A beam can prune the prefix of a leaf that would end up in the top 20, so
  // only the scores of returned hits and their order are checked here.
  std::mt19937_64 rng(202);
  int exact = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const auto cfg = small_config(3, 8);
    const SeqModel m = lively_model(cfg, 2000 + static_cast<std::uint64_t>(trial));
    const auto mapping = testing::random_mapping(rng, 64, 3, 8);
    const auto trie = IndexTrie::build(mapping);
    const auto prompt = random_prompt(m, rng, mapping);
    const auto beam = constrained_beam_search(m, prompt, trie, 20);
    const auto all = exhaustive_scores(m, prompt, trie);
    std::map<std::vector<int>, double> score;
    for (const auto& s : all) score[s.codes] = s.logprob;
    bool same = beam.size() == 20;
    for (std::size_t r = 0; r < beam.size(); ++r) {
      CHECK(std::abs(beam[r].logprob - score.at(beam[r].index.codes)) < 1e-6);
      if (r > 0) CHECK(beam[r - 1].logprob >= beam[r].logprob);
      same = same && beam[r].index.codes == all[r].codes;
    }
    exact += same ? 1 : 0;
  }
  MESSAGE("beam-20 matched exhaustive top-20 on " << exact << " of " << trials << " random 64-item tries");
}

TEST_CASE("beam width one is greedy constrained decoding") {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = small_config(3, 6);
    const SeqModel m = lively_model(cfg, 3000 + static_cast<std::uint64_t>(trial));
    const auto mapping = testing::random_mapping(rng, 40, 3, 6);
    const auto trie = IndexTrie::build(mapping);
    const auto prompt = random_prompt(m, rng, mapping);
    const auto hit = constrained_beam_search(m, prompt, trie, 1);
    const auto greedy = testing::greedy_decode(m, prompt, trie);
    REQUIRE(hit.size() == 1);
    CHECK(hit[0].index.codes == greedy.codes);
    CHECK(std::abs(hit[0].logprob - greedy.logprob) < 1e-9);
  }
}

TEST_CASE("uniform model returns every leaf in lexicographic order with equal scores") {
  const auto cfg = small_config(2, 4);
  const SeqModel m(cfg);
  const IndexMapping mapping(2, 4, {"e", "d", "c", "b", "a"},
                             {{{3, 0}}, {{1, 2}}, {{1, 0}}, {{0, 3}}, {{2, 2}}});
  const auto trie = IndexTrie::build(mapping);
  const std::vector<int> prompt{TokenVocab::kBos, TokenVocab::kSep};
  const auto hits = constrained_beam_search(m, prompt, trie, 20);
  REQUIRE(hits.size() == 5);
  const std::vector<std::vector<int>> order{{0, 3}, {1, 0}, {1, 2}, {2, 2}, {3, 0}};
  const double expected = 2.0 * -std::log(static_cast<double>(m.vocab().size()));
  for (std::size_t r = 0; r < hits.size(); ++r) {
    CHECK(hits[r].index.codes == order[r]);
    CHECK(std::abs(hits[r].logprob - expected) < 1e-12);
  }
}

TEST_CASE("single-item trie always yields that item") {
  std::mt19937_64 rng(404);
  const auto cfg = small_config(3, 5);
  const IndexMapping mapping(3, 5, {"only"}, {{{4, 0, 2}}});
  const auto trie = IndexTrie::build(mapping);
  for (int trial = 0; trial < 5; ++trial) {
    const SeqModel m = lively_model(cfg, 4000 + static_cast<std::uint64_t>(trial));
    const auto hits = constrained_beam_search(m, random_prompt(m, rng, mapping), trie, 20);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].index.codes == std::vector<int>{4, 0, 2});
    CHECK(hits[0].logprob < 0.0);
  }
}

TEST_CASE("beam search argument errors") {
  const auto cfg = small_config(2, 4);
  const SeqModel m(cfg);
  const std::vector<int> prompt{TokenVocab::kBos, TokenVocab::kSep};
  const auto trie2 = IndexTrie::build(IndexMapping(2, 4, {"a"}, {{{1, 1}}}));
  const auto trie3 = IndexTrie::build(IndexMapping(3, 4, {"a"}, {{{1, 1, 1}}}));
  CHECK_THROWS_AS(constrained_beam_search(m, prompt, trie2, 0), DomainError);
  CHECK_THROWS_AS(constrained_beam_search(m, prompt, trie3, 5), DomainError);
}

TEST_CASE("scheduled_lr warms up linearly then decays by a cosine") {
  RecTrainConfig cfg;
  cfg.lr = 1.0;
  cfg.warmup_frac = 0.1;
  CHECK(std::abs(scheduled_lr(cfg, 0, 100) - 0.1) < 1e-12);
  CHECK(std::abs(scheduled_lr(cfg, 4, 100) - 0.5) < 1e-12);
  CHECK(std::abs(scheduled_lr(cfg, 9, 100) - 1.0) < 1e-12);
  CHECK(std::abs(scheduled_lr(cfg, 10, 100) - 1.0) < 1e-12);
  CHECK(std::abs(scheduled_lr(cfg, 55, 100) - 0.5) < 1e-12);
  CHECK(std::abs(scheduled_lr(cfg, 100, 100)) < 1e-12);
  for (long s = 11; s <= 100; ++s) CHECK(scheduled_lr(cfg, s, 100) <= scheduled_lr(cfg, s - 1, 100));
  cfg.warmup_frac = 0.0;  // still one warmup step
  CHECK(std::abs(scheduled_lr(cfg, 0, 100) - 1.0) < 1e-12);
}

TEST_CASE("rec_config_from_json validates and round-trips") {
  RecTrainConfig cfg = toy_train_config(3);
  const RecTrainConfig back = rec_config_from_json(to_json(cfg));
  CHECK(back.model == cfg.model);
  CHECK(back.epochs == 3);
  CHECK(back.lr == cfg.lr);
  CHECK(back.seed == cfg.seed);
  CHECK_THROWS_AS(rec_config_from_json(Json{{"epochs", 0}}), ConfigError);
  CHECK_THROWS_AS(rec_config_from_json(Json{{"warmup_frac", 1.5}}), ConfigError);
  CHECK_THROWS_AS(rec_config_from_json(Json{{"lr", "fast"}}), ConfigError);
}

TEST_CASE("recgen training lowers validation NLL and is deterministic") {
  const Toy toy = toy_corpus(5);
  REQUIRE(toy.split.users.size() > 50);
  const auto cfg = toy_train_config(10);
  const auto a = train_recgen(toy.split, toy.mapping, cfg);
  REQUIRE(a.report.valid_nll.size() == 10);
  MESSAGE("valid NLL epoch 1 " << a.report.valid_nll.front() << ", epoch 10 " << a.report.valid_nll.back());
  CHECK(a.report.valid_nll.back() < a.report.valid_nll.front());
  CHECK(a.report.train_nll.back() < a.report.train_nll.front());

  const auto b = train_recgen(toy.split, toy.mapping, cfg);
  CHECK(a.model == b.model);
  CHECK(a.report.valid_nll == b.report.valid_nll);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  const Toy toy = toy_corpus(6);
  auto cfg = toy_train_config(2);
  cfg.lr = 0.0;
  SeqModelConfig mc = cfg.model;
  mc.levels = toy.mapping.levels();
  mc.codes = toy.mapping.codes();
  SeqModel m = SeqModel::random(mc, 1, 0.05);
  const SeqModel before = m;
  fit_recgen(m, toy.split, toy.mapping, cfg);
  CHECK(m == before);

  SeqModelConfig wrong = mc;
  wrong.codes += 1;
  SeqModel bad = SeqModel::random(wrong, 1, 0.05);
  CHECK_THROWS_AS(fit_recgen(bad, toy.split, toy.mapping, cfg), ConfigError);
}

TEST_CASE("recommend ranks trie-valid items for every user") {
  const Toy toy = toy_corpus(7);
  const auto cfg = toy_train_config(2);
  const auto trained = train_recgen(toy.split, toy.mapping, cfg);
  const auto trie = IndexTrie::build(toy.mapping);
  const auto rows = recommend(trained.model, toy.split, SplitKind::kTest, toy.mapping, trie, 5, cfg.max_items);
  std::map<std::string, int> per_user;
  for (const auto& r : rows) {
    CHECK(toy.mapping.find(r.item_id) != nullptr);
    CHECK(r.rank == ++per_user[r.user_id]);
    CHECK(r.logprob <= 0.0);
  }
  CHECK(per_user.size() == toy.split.users.size());
  for (const auto& [u, n] : per_user) CHECK(n == 5);

  const auto truth = split_truth(toy.split, SplitKind::kTest);
  CHECK(truth.size() == toy.split.users.size());
  CHECK(truth.at(toy.split.users[0].user_id) == toy.split.users[0].test_target);
  CHECK(split_truth(toy.split, SplitKind::kValid).at(toy.split.users[0].user_id) ==
        toy.split.users[0].valid_target);
  CHECK_THROWS_AS(split_truth(toy.split, SplitKind::kTrain), DomainError);
  CHECK_THROWS_AS(recommend(trained.model, toy.split, SplitKind::kTrain, toy.mapping, trie, 5, 10), DomainError);
}
