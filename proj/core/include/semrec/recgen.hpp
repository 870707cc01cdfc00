// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "semrec/corpus.hpp"
#include "semrec/indexstore.hpp"
#include "semrec/instruct.hpp"
#include "semrec/json.hpp"
#include "semrec/metrics.hpp"
#include "semrec/seqmodel.hpp"

namespace semrec {

struct RecTrainConfig {
  SeqModelConfig model;  // levels and codes are taken from the index
  int epochs = 20;
  int batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;
  double init_std = 0.02;
  int max_items = 20;  // history window
  std::uint64_t seed = 42;
};

Json to_json(const RecTrainConfig& cfg);
RecTrainConfig rec_config_from_json(const Json& j, RecTrainConfig defaults = {});

/// Linear warmup over the first warmup_frac of `total` steps, then cosine decay to zero.
double scheduled_lr(const RecTrainConfig& cfg, long step, long total);

/// Tokenized (history -> target) pairs for a split (see make_examples).
std::vector<SeqExample> tokenize_examples(const std::vector<SequenceExample>& examples, const IndexMapping& mapping,
                                          const TokenVocab& vocab, int max_positions, int max_items);

struct RecTrainReport {
  std::vector<double> train_nll;  // mean per epoch over the sampled examples
  std::vector<double> valid_nll;  // after each epoch
};

using RecEpochLogger = std::function<void(int epoch, double train_nll, double valid_nll)>;

/// AdamW on the model in place. Each epoch every user with at least two
/// training items contributes one example cut at a seeded random position of
/// the training sequence. Validation predicts the validation target from all
/// training items. Throws NumericalError on a non-finite loss.
RecTrainReport fit_recgen(SeqModel& model, const LooSplit& split, const IndexMapping& mapping,
                          const RecTrainConfig& cfg, const RecEpochLogger& log = {});

struct RecTrained {
  SeqModel model;
  RecTrainReport report;
};
RecTrained train_recgen(const LooSplit& split, const IndexMapping& mapping, const RecTrainConfig& cfg,
                        const RecEpochLogger& log = {});

/// Mean NLL of the model over examples, processed in chunks.
double mean_nll(const SeqModel& model, const std::vector<SeqExample>& examples);

/// Beam-search ranking for every user of `split`. The history is the training
/// items for kValid and training plus validation items for kTest.
std::vector<PredictionRow> recommend(const SeqModel& model, const LooSplit& split, SplitKind kind,
                                     const IndexMapping& mapping, const IndexTrie& trie, int beam, int max_items);

/// user -> held-out item for a split.
std::map<std::string, std::string> split_truth(const LooSplit& split, SplitKind kind);

}  // namespace semrec
