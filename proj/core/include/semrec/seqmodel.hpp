// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semrec/indexstore.hpp"
#include "semrec/json.hpp"
#include "semrec/linalg.hpp"

namespace semrec {

/// Special tokens followed by one token per (level, code), level-major.
class TokenVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kFirstIndex = 4;

  TokenVocab() = default;
  TokenVocab(int levels, int codes);

  int levels() const { return levels_; }
  int codes() const { return codes_; }
  int size() const { return kFirstIndex + levels_ * codes_; }

  /// Throws RangeError outside the codebook shape.
  int token(int level, int code) const;
  bool is_index(int token) const { return token >= kFirstIndex && token < size(); }
  int level_of(int token) const { return (token - kFirstIndex) / codes_; }
  int code_of(int token) const { return (token - kFirstIndex) % codes_; }
  /// "[BOS]" or "<b_7>".
  std::string name(int token) const;

 private:
  int levels_ = 0;
  int codes_ = 0;
};

/// BOS, history index tokens, SEP, then the target's tokens and EOS when a
/// target is given. Only the most recent `max_items` history items are kept,
/// and further oldest items are dropped until the sequence fits `max_positions`.
std::vector<int> encode_sequence(const std::vector<SemanticIndex>& history, const std::optional<SemanticIndex>& target,
                                 const TokenVocab& vocab, int max_positions, int max_items = 20);

struct SeqModelConfig {
  int levels = 4;
  int codes = 256;
  int layers = 2;
  int dim = 64;
  int heads = 4;
  int max_positions = 128;
  int ffn_mult = 4;

  bool operator==(const SeqModelConfig&) const = default;
};

Json to_json(const SeqModelConfig& cfg);
SeqModelConfig seq_config_from_json(const Json& j, SeqModelConfig defaults = {});

/// Per layer keys and values of the processed prefix.
struct DecodeCache {
  std::vector<RowMatrix> keys;
  std::vector<RowMatrix> values;
  int length = 0;
};

/// Token sequence with the position of its first supervised token; every
/// token from there to the end is predicted from its predecessor.
struct SeqExample {
  std::vector<int> tokens;
  int target_start = 0;
};

/// Pre-LayerNorm decoder-only transformer with causal multi-head attention,
/// GELU feed-forward blocks, learned positions and a tied token embedding.
class SeqModel {
 public:
  SeqModel() = default;
  /// All parameters zero, LayerNorm gains included. Throws ConfigError on a bad shape.
  explicit SeqModel(const SeqModelConfig& cfg);
  /// Normal(0, init_std) weights; residual output projections scaled by 1/sqrt(2L).
  static SeqModel random(const SeqModelConfig& cfg, std::uint64_t seed, double init_std = 0.02);

  const SeqModelConfig& config() const { return cfg_; }
  const TokenVocab& vocab() const { return vocab_; }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  /// Logits at every position (T x V).
  RowMatrix logits(std::span<const int> tokens) const;

  /// Feeds one token through the cache and returns the next-token logits.
  Vector decode_step(DecodeCache& cache, int token) const;
  /// Empty cache for this model.
  DecodeCache new_cache() const;
  /// Runs `tokens` through a fresh cache; returns the logits after the last one.
  Vector prefill(DecodeCache& cache, std::span<const int> tokens) const;

  /// Mean over examples of the summed target-token NLL. When `grad` is not
  /// null it receives the gradient (resized and zeroed here).
  double nll(std::span<const SeqExample> batch, Vector* grad = nullptr) const;

  bool operator==(const SeqModel& other) const {
    return cfg_ == other.cfg_ && params_.size() == other.params_.size() && params_ == other.params_;
  }

  struct Layout;

 private:
  double example_nll(const SeqExample& ex, Vector* grad) const;
  void validate_tokens(std::span<const int> tokens) const;

  SeqModelConfig cfg_;
  TokenVocab vocab_;
  Vector params_;
};

/// Largest relative error between the analytic nll gradient and central
/// differences. The denominator is floored at `floor`: components whose true
/// gradient is zero (key biases, for one) still carry ~1e-10 of rounding noise.
double seq_grad_check(const SeqModel& model, std::span<const SeqExample> batch, double step = 1e-4,
                      double corrupt = 0.0, double floor = 1e-6);

void save_seq_model(const SeqModel& model, const std::filesystem::path& path, const Json& meta = Json::object());
SeqModel load_seq_model(const std::filesystem::path& path);
Json seq_model_to_json(const SeqModel& model);
SeqModel seq_model_from_json(const Json& j);

}  // namespace semrec
