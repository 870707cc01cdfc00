// SPDX-License-Identifier: Apache-2.0
#include "semrec/recgen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "semrec/adamw.hpp"
#include "semrec/beam_search.hpp"
#include "semrec/errors.hpp"

namespace semrec {

Json to_json(const RecTrainConfig& cfg) {
  return Json{{"model", to_json(cfg.model)}, {"epochs", cfg.epochs},
              {"batch", cfg.batch},          {"lr", cfg.lr},
              {"weight_decay", cfg.weight_decay}, {"warmup_frac", cfg.warmup_frac},
              {"init_std", cfg.init_std},    {"max_items", cfg.max_items},
              {"seed", cfg.seed}};
}

RecTrainConfig rec_config_from_json(const Json& j, RecTrainConfig d) {
  try {
    if (j.contains("model")) d.model = seq_config_from_json(j.at("model"), d.model);
    d.epochs = j.value("epochs", d.epochs);
    d.batch = j.value("batch", d.batch);
    d.lr = j.value("lr", d.lr);
    d.weight_decay = j.value("weight_decay", d.weight_decay);
    d.warmup_frac = j.value("warmup_frac", d.warmup_frac);
    d.init_std = j.value("init_std", d.init_std);
    d.max_items = j.value("max_items", d.max_items);
    d.seed = j.value("seed", d.seed);
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("bad recgen config: {}", e.what()));
  }
  if (d.epochs < 1 || d.batch < 1 || d.lr < 0.0 || d.warmup_frac < 0.0 || d.warmup_frac > 1.0 || d.max_items < 1)
    throw ConfigError("recgen config needs epochs >= 1, batch >= 1, lr >= 0, warmup_frac in [0, 1], max_items >= 1");
  return d;
}

double scheduled_lr(const RecTrainConfig& cfg, long step, long total) {
  const long warmup = std::max(1L, std::lround(cfg.warmup_frac * static_cast<double>(total)));
  if (step < warmup) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long span = std::max(1L, total - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

std::vector<SemanticIndex> indices_of(const std::vector<std::string>& items, const IndexMapping& mapping) {
  std::vector<SemanticIndex> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(mapping.at(it));
  return out;
}

SeqExample tokenize(const std::vector<std::string>& history, const std::string& target, const IndexMapping& mapping,
                    const TokenVocab& vocab, int max_positions, int max_items) {
  SeqExample ex;
  ex.tokens = encode_sequence(indices_of(history, mapping), mapping.at(target), vocab, max_positions, max_items);
  ex.target_start = static_cast<int>(ex.tokens.size()) - vocab.levels() - 1;
  return ex;
}

}  // namespace

std::vector<SeqExample> tokenize_examples(const std::vector<SequenceExample>& examples, const IndexMapping& mapping,
                                          const TokenVocab& vocab, int max_positions, int max_items) {
  std::vector<SeqExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(tokenize(e.history, e.target, mapping, vocab, max_positions, max_items));
  return out;
}

double mean_nll(const SeqModel& model, const std::vector<SeqExample>& examples) {
  if (examples.empty()) throw DomainError("no examples to score");
  double total = 0.0;
  for (const auto& ex : examples) total += model.nll(std::span(&ex, 1));
  return total / static_cast<double>(examples.size());
}

RecTrainReport fit_recgen(SeqModel& model, const LooSplit& split, const IndexMapping& mapping,
                          const RecTrainConfig& cfg, const RecEpochLogger& log) {
  const TokenVocab& vocab = model.vocab();
  if (vocab.levels() != mapping.levels() || vocab.codes() != mapping.codes())
    throw ConfigError(fmt::format("model vocabulary is {}x{}, index is {}x{}", vocab.levels(), vocab.codes(),
                                  mapping.levels(), mapping.codes()));
  const int N = model.config().max_positions;

  std::vector<const UserSplit*> trainable;
  for (const auto& u : split.users)
    if (u.train_items.size() >= 2) trainable.push_back(&u);
  if (trainable.empty()) throw DomainError("no user has two or more training items");
  const auto valid = tokenize_examples(make_examples(split, SplitKind::kValid), mapping, vocab, N, cfg.max_items);

  const auto per_epoch = static_cast<long>((trainable.size() + static_cast<std::size_t>(cfg.batch) - 1) /
                                           static_cast<std::size_t>(cfg.batch));
  const long total_steps = per_epoch * cfg.epochs;
  AdamW opt(model.params().size(), AdamWConfig{.weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);

  RecTrainReport report;
  long step = 0;
  Vector grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SeqExample> examples;
    examples.reserve(trainable.size());
    for (const auto* u : trainable) {
      std::uniform_int_distribution<std::size_t> cut(1, u->train_items.size() - 1);
      const std::size_t t = cut(rng);
      const std::vector<std::string> history(u->train_items.begin(),
                                             u->train_items.begin() + static_cast<std::ptrdiff_t>(t));
      examples.push_back(tokenize(history, u->train_items[t], mapping, vocab, N, cfg.max_items));
    }
    std::shuffle(examples.begin(), examples.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch), examples.size() - start);
      const double loss = model.nll(std::span(examples).subspan(start, n), &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericalError(fmt::format("non-finite recgen loss at epoch {}, step {}", epoch, step));
      opt.step(model.params(), grad, scheduled_lr(cfg, step, total_steps));
      ++step;
      epoch_loss += loss * static_cast<double>(n);
    }
    report.train_nll.push_back(epoch_loss / static_cast<double>(examples.size()));
    report.valid_nll.push_back(valid.empty() ? 0.0 : mean_nll(model, valid));
    if (log) log(epoch, report.train_nll.back(), report.valid_nll.back());
  }
  return report;
}

RecTrained train_recgen(const LooSplit& split, const IndexMapping& mapping, const RecTrainConfig& cfg,
                        const RecEpochLogger& log) {
  SeqModelConfig mc = cfg.model;
  mc.levels = mapping.levels();
  mc.codes = mapping.codes();
  RecTrained out{SeqModel::random(mc, cfg.seed, cfg.init_std), {}};
  out.report = fit_recgen(out.model, split, mapping, cfg, log);
  return out;
}

std::map<std::string, std::string> split_truth(const LooSplit& split, SplitKind kind) {
  if (kind == SplitKind::kTrain) throw DomainError("the training split has no single held-out item");
  std::map<std::string, std::string> out;
  for (const auto& e : make_examples(split, kind)) out[e.user_id] = e.target;
  return out;
}

std::vector<PredictionRow> recommend(const SeqModel& model, const LooSplit& split, SplitKind kind,
                                     const IndexMapping& mapping, const IndexTrie& trie, int beam, int max_items) {
  if (kind == SplitKind::kTrain) throw DomainError("recommend runs on the validation or test split");
  std::vector<PredictionRow> rows;
  for (const auto& e : make_examples(split, kind)) {
    const auto prompt = encode_sequence(indices_of(e.history, mapping), std::nullopt, model.vocab(),
                                        model.config().max_positions - model.vocab().levels(), max_items);
    const auto hits = constrained_beam_search(model, prompt, trie, beam);
    int rank = 0;
    for (const auto& h : hits) rows.push_back({e.user_id, ++rank, *trie.item_at(h.index.codes), h.logprob});
  }
  return rows;
}

}  // namespace semrec
