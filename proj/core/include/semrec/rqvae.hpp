// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "semrec/codebook.hpp"
#include "semrec/embed.hpp"
#include "semrec/json.hpp"
#include "semrec/mlp.hpp"
#include "semrec/usm.hpp"

namespace semrec {

struct RqvaeArch {
  int d_emb = 0;
  int d_code = 32;
  std::vector<int> hidden = {256, 128};  // encoder; the decoder mirrors it
  int levels = 4;
  int codes = 256;

  std::vector<int> encoder_sizes() const;
  std::vector<int> decoder_sizes() const;
};

struct RqvaeTrainConfig {
  double beta = 0.25;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int batch_size = 1024;
  int epochs = 200;
  std::uint64_t seed = 42;
  bool usm_enabled = true;
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_iters = 100;
  int kmeans_iters = 10;
  bool dead_code_reset = true;
};

struct RqvaeModel {
  MlpNetwork encoder;
  MlpNetwork decoder;
  Codebook codebook;

  bool operator==(const RqvaeModel&) const = default;
};

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double rq = 0.0;
};

Vector encode(const MlpNetwork& net, const Vector& e);
Vector decode(const MlpNetwork& net, const Vector& z_hat);

/// Per-item loss: recon = |e - e_hat|^2 and
/// rq = sum_i |sg[r_i] - v_i|^2 + beta |r_i - sg[v_i]|^2 (forward values only).
LossTerms loss(const Vector& e, const Vector& e_hat, const QuantizeResult& result, const Codebook& cb, double beta);

/// Parameter gradients with the layouts of the encoder, decoder and codebook.
struct RqvaeGradient {
  Vector encoder;
  Vector decoder;
  Vector codebook;
};

/// Mean loss over the batch rows of `x` and its stop-gradient /
/// straight-through gradient, for fixed `codes` (rows x H).
LossTerms loss_and_gradient(const RqvaeModel& model, const RowMatrix& x, const CodeMatrix& codes, double beta,
                            RqvaeGradient* grad);

/// Codes for one batch as training assigns them: greedy on all levels, or
/// uniform mapping on the last level when `usm_enabled`.
CodeMatrix assign_codes(const RqvaeModel& model, const RowMatrix& z, const RqvaeTrainConfig& cfg);

struct GradCheckOptions {
  double step = 1e-4;
  /// Added to the first analytic gradient component; a sensitivity probe.
  double corrupt = 0.0;
};

/// Largest relative error between analytic gradients and central finite
/// differences of the surrogate objective whose exact gradient is the
/// stop-gradient one (codes, sg[] operands and the straight-through offset
/// frozen at the current parameters).
double grad_check(const RqvaeModel& model, const RowMatrix& batch, double beta, const GradCheckOptions& opts = {});

/// Random MLPs plus k-means codebooks fitted level by level to the residuals
/// of the untrained encoder.
RqvaeModel init_model(const RqvaeArch& arch, const RowMatrix& data, const RqvaeTrainConfig& cfg);

struct RqvaeTrainReport {
  LossTerms initial;                 // mean over all items before the first update
  std::vector<LossTerms> epochs;     // mean over items per epoch
};

using EpochLogger = std::function<void(int epoch, const LossTerms&)>;

/// Mini-batch AdamW on the model in place. Throws NumericalError naming the
/// epoch and batch on a non-finite loss.
RqvaeTrainReport fit(RqvaeModel& model, const RowMatrix& data, const RqvaeTrainConfig& cfg,
                     const EpochLogger& log = {});

/// Mean loss over all rows with the training-time code assignment.
LossTerms evaluate(const RqvaeModel& model, const RowMatrix& data, const RqvaeTrainConfig& cfg);

struct RqvaeTrained {
  RqvaeModel model;
  RqvaeTrainReport report;
};
RqvaeTrained train(const EmbeddingMatrix& matrix, const RqvaeArch& arch, const RqvaeTrainConfig& cfg,
                   const EpochLogger& log = {});

Json to_json(const RqvaeArch& arch);
Json to_json(const RqvaeTrainConfig& cfg);
RqvaeArch arch_from_json(const Json& j);
RqvaeTrainConfig train_config_from_json(const Json& j, RqvaeTrainConfig defaults = {});

/// JSON checkpoint with layer sizes, flat parameters, codebook and config.
void save_checkpoint(const RqvaeModel& model, const RqvaeArch& arch, const RqvaeTrainConfig& cfg,
                     const std::filesystem::path& path, const Json& meta = Json::object());
struct RqvaeCheckpoint {
  RqvaeModel model;
  RqvaeArch arch;
  RqvaeTrainConfig config;
};
RqvaeCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semrec
