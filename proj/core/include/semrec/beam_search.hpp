// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "semrec/indexstore.hpp"
#include "semrec/seqmodel.hpp"

namespace semrec {

struct BeamHit {
  SemanticIndex index;
  double logprob = 0.0;
};

/// Generates H index tokens after `prompt` (which should end with SEP). At
/// step s only level-s tokens whose code extends a trie prefix are allowed;
/// every other token gets log-prob -inf. Allowed tokens keep their
/// log-softmax over the full vocabulary, no renormalization. Returns at most
/// `beam` complete indices ordered by log-prob descending, ties by token order.
/// Throws DomainError for beam < 1 and when the trie depth differs from H.
std::vector<BeamHit> constrained_beam_search(const SeqModel& model, std::span<const int> prompt,
                                             const IndexTrie& trie, int beam);

}  // namespace semrec
