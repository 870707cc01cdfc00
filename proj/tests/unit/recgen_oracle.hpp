// SPDX-License-Identifier: Apache-2.0
// Brute-force references for constrained decoding, built only on uncached
// full-sequence logits.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "semrec/beam_search.hpp"
#include "semrec/indexstore.hpp"
#include "semrec/seqmodel.hpp"

namespace semrec::testing {

struct ScoredLeaf {
  std::vector<int> codes;
  double logprob = 0.0;
};

inline double log_softmax_at(const RowMatrix& logits, Eigen::Index row, int token) {
  const auto r = logits.row(row);
  const double mx = r.maxCoeff();
  return r[token] - mx - std::log((r.array() - mx).exp().sum());
}

// Every leaf of the trie scored as prompt + its H tokens, best first, ties by codes.
inline std::vector<ScoredLeaf> exhaustive_scores(const SeqModel& model, const std::vector<int>& prompt,
                                                 const IndexTrie& trie) {
  const TokenVocab& v = model.vocab();
  std::vector<ScoredLeaf> out;
  for (const auto& [idx, item] : trie.leaves()) {
    std::vector<int> seq = prompt;
    for (int h = 0; h < v.levels(); ++h) seq.push_back(v.token(h, idx.codes[static_cast<std::size_t>(h)]));
    const RowMatrix logits = model.logits(seq);
    double lp = 0.0;
    for (int h = 0; h < v.levels(); ++h)
      lp += log_softmax_at(logits, static_cast<Eigen::Index>(prompt.size()) - 1 + h,
                           seq[prompt.size() + static_cast<std::size_t>(h)]);
    out.push_back({idx.codes, lp});
  }
  std::stable_sort(out.begin(), out.end(), [](const ScoredLeaf& a, const ScoredLeaf& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.codes < b.codes;
  });
  return out;
}

// Step-by-step argmax over trie-legal tokens of the current level, lowest code on ties.
inline ScoredLeaf greedy_decode(const SeqModel& model, const std::vector<int>& prompt, const IndexTrie& trie) {
  const TokenVocab& v = model.vocab();
  std::vector<int> seq = prompt;
  ScoredLeaf out;
  for (int h = 0; h < v.levels(); ++h) {
    const RowMatrix logits = model.logits(seq);
    const Eigen::Index last = static_cast<Eigen::Index>(seq.size()) - 1;
    int best = -1;
    double best_lp = -INFINITY;
    for (int c : trie.valid_next(out.codes)) {
      const double lp = log_softmax_at(logits, last, v.token(h, c));
      if (lp > best_lp) {
        best_lp = lp;
        best = c;
      }
    }
    out.codes.push_back(best);
    out.logprob += best_lp;
    seq.push_back(v.token(h, best));
  }
  return out;
}

// Trie of `n` random distinct indices.
inline IndexMapping random_mapping(std::mt19937_64& rng, int n, int levels, int codes) {
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

// Trie whose non-final levels hold at most `max_prefixes` distinct live
// prefixes, so a beam of that width never prunes a prefix of the optimum.
inline IndexMapping narrow_mapping(std::mt19937_64& rng, int n, int levels, int codes, int max_prefixes) {
  std::uniform_int_distribution<int> pick(0, codes - 1);
  std::vector<std::vector<int>> prefixes;
  std::set<std::vector<int>> prefix_set;
  while (static_cast<int>(prefixes.size()) < max_prefixes) {
    std::vector<int> p(static_cast<std::size_t>(levels - 1));
    for (auto& x : p) x = pick(rng);
    if (prefix_set.insert(p).second) prefixes.push_back(p);
  }
  // Shorter prefixes of these are at most as many, since each maps onto one.
  std::uniform_int_distribution<std::size_t> which(0, prefixes.size() - 1);
  std::set<std::vector<int>> used;
  std::vector<std::string> items;
  std::vector<SemanticIndex> idx;
  while (static_cast<int>(items.size()) < n) {
    std::vector<int> c = prefixes[which(rng)];
    c.push_back(pick(rng));
    if (!used.insert(c).second) continue;
    items.push_back("item" + std::to_string(items.size()));
    idx.push_back({c});
  }
  return IndexMapping(levels, codes, items, idx);
}

// Random model with weights large enough to give spread-out scores.
inline SeqModel lively_model(const SeqModelConfig& c, std::uint64_t seed) {
  SeqModel m = SeqModel::random(c, seed, 0.4);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.2);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] += n(rng);
  return m;
}

}  // namespace semrec::testing
