// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "semrec/corpus.hpp"
#include "semrec/indexstore.hpp"
#include "semrec/json.hpp"
#include "semrec/recgen.hpp"
#include "semrec/rqvae.hpp"
#include "semrec/usm.hpp"

namespace semrec {

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelinePaths {
  std::filesystem::path output_dir = "semrec_run";
  // Unset inputs default to the files the synth stage writes under output_dir/data.
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> interactions;
  std::optional<std::filesystem::path> texts;
  std::optional<std::filesystem::path> intention_sidecar;   // JSONL {item_id, intention}
  std::optional<std::filesystem::path> preference_sidecar;  // JSONL {user_id, preference}
  std::optional<std::filesystem::path> templates;           // JSON {variant: [template, ...]}
  std::optional<std::filesystem::path> reviews;             // convert-reviews inputs
  std::optional<std::filesystem::path> reviews_meta;
};

struct CorpusOptions {
  int min_count = 5;
  int max_len = 20;
};

struct EmbedOptions {
  int d_emb = 64;
  std::uint64_t seed = 42;
  bool standardize = false;
};

struct InstructOptions {
  int epochs = 1;
  std::uint64_t seed = 42;
  std::vector<std::string> tasks;  // empty = all families
};

struct EvalOptions {
  int beam = 20;
  std::vector<int> ks = {1, 5, 10};
  std::string split = "test";  // "test" | "valid"
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  PipelinePaths paths;
  SynthConfig synth;
  CorpusOptions corpus;
  EmbedOptions embed;
  RqvaeArch rqvae_arch;  // d_emb is taken from the embeddings
  RqvaeTrainConfig rqvae;
  InstructOptions instruct;
  RecTrainConfig recgen;
  EvalOptions eval;

  /// Sets the global seed and every module seed.
  void apply_seed(std::uint64_t s);

  std::filesystem::path data_dir() const { return paths.output_dir / "data"; }
  std::filesystem::path embeddings_path() const;
  std::filesystem::path interactions_path() const;
  std::filesystem::path texts_path() const;
  std::filesystem::path rqvae_checkpoint_path() const { return paths.output_dir / "rqvae" / "checkpoint.json"; }
  std::filesystem::path index_path() const { return paths.output_dir / "index" / "index.tsv"; }
  std::filesystem::path instruct_dir() const { return paths.output_dir / "instruct"; }
  std::filesystem::path recgen_model_path() const { return paths.output_dir / "recgen" / "model.json"; }
  std::filesystem::path predictions_path() const { return paths.output_dir / "eval" / "predictions.tsv"; }
  std::filesystem::path metrics_path() const { return paths.output_dir / "eval" / "metrics.json"; }
};

/// Full configuration document; keys: seed, paths, synth, corpus, embed,
/// rqvae {arch, train}, usm {enabled, epsilon, iterations}, instruct, recgen,
/// eval. Missing keys keep their defaults; unknown top-level keys are rejected.
Json to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const Json& j);
/// Throws ConfigError when the file is missing or invalid.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// SHA-256 of the canonical configuration JSON without paths.output_dir.
std::string config_hash(const PipelineConfig& cfg);

/// {config_hash, seed, tool_version, stage}; recorded in every artifact.
Json artifact_meta(const PipelineConfig& cfg, const std::string& stage);

struct RunOptions {
  bool force = false;       // rerun even when the stamp matches
  std::ostream* log = nullptr;  // progress lines; null = silent
};

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // stamp matched, nothing was recomputed
  std::vector<std::filesystem::path> outputs;
  Json summary = Json::object();
};

/// Filtered, windowed, leave-one-out split of the configured interactions.
LooSplit prepare_split(const PipelineConfig& cfg);

/// Greedy residual quantization of every embedding followed by conflict
/// resolution; the returned mapping has pairwise-distinct indices.
IndexMapping assign_index(const RqvaeModel& model, const EmbeddingMatrix& embeddings, ConflictStats* stats = nullptr);

StageOutcome run_synth(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_embed_texts(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_convert_reviews(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_index_train(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_index_assign(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_instruct_gen(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_rec_train(const PipelineConfig& cfg, const RunOptions& opts = {});
StageOutcome run_rec_eval(const PipelineConfig& cfg, const RunOptions& opts = {});

}  // namespace semrec
