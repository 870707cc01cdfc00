// SPDX-License-Identifier: Apache-2.0
#include "semrec/beam_search.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "semrec/errors.hpp"

namespace semrec {

namespace {

struct Beam {
  std::vector<int> codes;
  double score = 0.0;
  DecodeCache cache;
  Vector logprobs;  // next-token log-softmax
};

Vector log_softmax(const Vector& z) {
  const double mx = z.maxCoeff();
  return z.array() - (mx + std::log((z.array() - mx).exp().sum()));
}

struct Candidate {
  std::size_t parent;
  int code;
  double score;
};

}  // namespace

std::vector<BeamHit> constrained_beam_search(const SeqModel& model, std::span<const int> prompt,
                                             const IndexTrie& trie, int beam) {
  if (beam < 1) throw DomainError(fmt::format("beam must be >= 1, got {}", beam));
  const TokenVocab& vocab = model.vocab();
  const int H = vocab.levels();
  if (trie.levels() != H)
    throw DomainError(fmt::format("trie has {} levels, model generates {}", trie.levels(), H));
  if (prompt.size() + static_cast<std::size_t>(H) > static_cast<std::size_t>(model.config().max_positions))
    throw DomainError("prompt leaves no room for the generated index");

  std::vector<Beam> beams(1);
  beams[0].logprobs = log_softmax(model.prefill(beams[0].cache, prompt));

  for (int s = 0; s < H; ++s) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < beams.size(); ++b)
      for (int code : trie.valid_next(beams[b].codes))
        cands.push_back({b, code, beams[b].score + beams[b].logprobs[vocab.token(s, code)]});
    // Ties break on the code sequence, which orders like the token ids.
    std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (beams[a.parent].codes != beams[b.parent].codes) return beams[a.parent].codes < beams[b.parent].codes;
      return a.code < b.code;
    });
    if (cands.size() > static_cast<std::size_t>(beam)) cands.resize(static_cast<std::size_t>(beam));

    std::vector<Beam> next;
    next.reserve(cands.size());
    for (const auto& c : cands) {
      Beam nb;
      nb.codes = beams[c.parent].codes;
      nb.codes.push_back(c.code);
      nb.score = c.score;
      if (s + 1 < H) {
        nb.cache = beams[c.parent].cache;
        nb.logprobs = log_softmax(model.decode_step(nb.cache, vocab.token(s, c.code)));
      }
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  std::vector<BeamHit> hits;
  hits.reserve(beams.size());
  for (auto& b : beams) {
    if (!trie.item_at(b.codes)) throw GenerationError("beam search produced an index outside the trie");
    hits.push_back({SemanticIndex{std::move(b.codes)}, b.score});
  }
  return hits;
}

}  // namespace semrec
