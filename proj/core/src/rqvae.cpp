// SPDX-License-Identifier: Apache-2.0
#include "semrec/rqvae.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "semrec/adamw.hpp"
#include "semrec/errors.hpp"
#include "semrec/hashing.hpp"

namespace semrec {

std::vector<int> RqvaeArch::encoder_sizes() const {
  std::vector<int> sizes{d_emb};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d_code);
  return sizes;
}

std::vector<int> RqvaeArch::decoder_sizes() const {
  std::vector<int> sizes = encoder_sizes();
  std::reverse(sizes.begin(), sizes.end());
  return sizes;
}

Vector encode(const MlpNetwork& net, const Vector& e) { return net.forward(e); }
Vector decode(const MlpNetwork& net, const Vector& z_hat) { return net.forward(z_hat); }

LossTerms loss(const Vector& e, const Vector& e_hat, const QuantizeResult& result, const Codebook& cb, double beta) {
  if (e.size() != e_hat.size()) throw SchemaError("loss: embedding and reconstruction differ in dimension");
  LossTerms out;
  out.recon = (e - e_hat).squaredNorm();
  for (int h = 0; h < cb.levels(); ++h) {
    const double d = squared_distance(result.residuals[static_cast<std::size_t>(h)],
                                      cb.code(h, result.codes[static_cast<std::size_t>(h)]));
    out.rq += d + beta * d;
  }
  out.total = out.recon + out.rq;
  return out;
}

namespace {

/// Selected code vectors per level for each row.
std::vector<RowMatrix> gather_codes(const Codebook& cb, const CodeMatrix& codes) {
  std::vector<RowMatrix> out;
  out.reserve(static_cast<std::size_t>(cb.levels()));
  for (int h = 0; h < cb.levels(); ++h) {
    RowMatrix v(codes.rows(), cb.dim());
    for (Eigen::Index n = 0; n < codes.rows(); ++n) v.row(n) = cb.code(h, codes(n, h)).transpose();
    out.push_back(std::move(v));
  }
  return out;
}

void check_codes(const Codebook& cb, const CodeMatrix& codes, Eigen::Index rows) {
  if (codes.rows() != rows || codes.cols() != cb.levels())
    throw SchemaError("code matrix shape does not match the batch and codebook");
  if (codes.size() > 0 && (codes.minCoeff() < 0 || codes.maxCoeff() >= cb.codes()))
    throw RangeError("code outside [0, K)");
}

/// Values frozen at the base point of a gradient check.
struct FrozenSg {
  std::vector<RowMatrix> residuals;  // sg[r_i]
  std::vector<RowMatrix> codes;      // sg[v_i]
  RowMatrix st_offset;               // sg[z_hat - z]
};

double surrogate(const RqvaeModel& m, const RowMatrix& x, const CodeMatrix& codes, double beta, const FrozenSg& fz) {
  const RowMatrix z = m.encoder.forward(x);
  const RowMatrix e_hat = m.decoder.forward(RowMatrix(z + fz.st_offset));
  double total = (x - e_hat).squaredNorm();
  const std::vector<RowMatrix> v = gather_codes(m.codebook, codes);
  RowMatrix r = z;
  for (int h = 0; h < m.codebook.levels(); ++h) {
    total += (fz.residuals[static_cast<std::size_t>(h)] - v[static_cast<std::size_t>(h)]).squaredNorm();
    total += beta * (r - fz.codes[static_cast<std::size_t>(h)]).squaredNorm();
    r -= v[static_cast<std::size_t>(h)];
  }
  return total / static_cast<double>(x.rows());
}

}  // namespace

LossTerms loss_and_gradient(const RqvaeModel& model, const RowMatrix& x, const CodeMatrix& codes, double beta,
                            RqvaeGradient* grad) {
  const Codebook& cb = model.codebook;
  check_codes(cb, codes, x.rows());
  const double inv_b = 1.0 / static_cast<double>(x.rows());

  MlpNetwork::Trace enc_trace, dec_trace;
  const RowMatrix z = model.encoder.forward(x, grad ? &enc_trace : nullptr);
  const std::vector<RowMatrix> v = gather_codes(cb, codes);

  std::vector<RowMatrix> diff;  // r_i - v_i
  RowMatrix r = z;
  RowMatrix z_hat = RowMatrix::Zero(z.rows(), z.cols());
  for (int h = 0; h < cb.levels(); ++h) {
    diff.push_back(r - v[static_cast<std::size_t>(h)]);
    z_hat += v[static_cast<std::size_t>(h)];
    r -= v[static_cast<std::size_t>(h)];
  }
  // Straight-through: the decoder sees z_hat, its input gradient goes to z.
  const RowMatrix e_hat = model.decoder.forward(z_hat, grad ? &dec_trace : nullptr);

  LossTerms out;
  out.recon = (x - e_hat).squaredNorm() * inv_b;
  for (const auto& d : diff) out.rq += (1.0 + beta) * d.squaredNorm() * inv_b;
  out.total = out.recon + out.rq;
  if (!grad) return out;

  grad->encoder = Vector::Zero(model.encoder.params().size());
  grad->decoder = Vector::Zero(model.decoder.params().size());
  grad->codebook = Vector::Zero(cb.data().size());

  const RowMatrix d_ehat = (2.0 * inv_b) * (e_hat - x);
  RowMatrix d_z = model.decoder.backward(dec_trace, d_ehat, grad->decoder);

  // Commitment of level i reaches z and every earlier code through r_i.
  RowMatrix later = RowMatrix::Zero(z.rows(), z.cols());
  for (int h = cb.levels() - 1; h >= 0; --h) {
    const RowMatrix& d = diff[static_cast<std::size_t>(h)];
    d_z += (2.0 * beta * inv_b) * d;
    const RowMatrix d_v = (-2.0 * inv_b) * d - (2.0 * beta * inv_b) * later;
    auto level_grad = cb.level(grad->codebook, h);
    for (Eigen::Index n = 0; n < x.rows(); ++n) level_grad.row(codes(n, h)) += d_v.row(n);
    later += d;
  }
  model.encoder.backward(enc_trace, d_z, grad->encoder);
  return out;
}

CodeMatrix assign_codes(const RqvaeModel& model, const RowMatrix& z, const RqvaeTrainConfig& cfg) {
  if (!cfg.usm_enabled) return quantize_batch(z, model.codebook);
  SinkhornOptions opts;
  opts.epsilon = cfg.sinkhorn_epsilon;
  opts.iterations = cfg.sinkhorn_iters;
  return quantize_with_usm(z, model.codebook, opts).codes;
}

double grad_check(const RqvaeModel& model, const RowMatrix& batch, double beta, const GradCheckOptions& opts) {
  const RowMatrix z = model.encoder.forward(batch);
  std::vector<RowMatrix> residuals;
  RowMatrix z_hat;
  const CodeMatrix codes = quantize_batch(z, model.codebook, &residuals, &z_hat);

  FrozenSg fz;
  fz.residuals.assign(residuals.begin(), residuals.end() - 1);
  fz.codes = gather_codes(model.codebook, codes);
  fz.st_offset = z_hat - z;

  RqvaeGradient analytic;
  loss_and_gradient(model, batch, codes, beta, &analytic);
  if (analytic.encoder.size() > 0) analytic.encoder[0] += opts.corrupt;

  RqvaeModel probe = model;
  double worst = 0.0;
  auto check_block = [&](Vector& params, const Vector& g) {
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + opts.step;
      const double up = surrogate(probe, batch, codes, beta, fz);
      params[i] = saved - opts.step;
      const double down = surrogate(probe, batch, codes, beta, fz);
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(g[i] - numeric) / denom);
    }
  };
  check_block(probe.encoder.params(), analytic.encoder);
  check_block(probe.decoder.params(), analytic.decoder);
  check_block(probe.codebook.data(), analytic.codebook);
  return worst;
}

RqvaeModel init_model(const RqvaeArch& arch, const RowMatrix& data, const RqvaeTrainConfig& cfg) {
  if (arch.d_emb != data.cols())
    throw SchemaError(fmt::format("embeddings have dimension {}, architecture expects {}", data.cols(), arch.d_emb));
  std::mt19937_64 rng(cfg.seed);
  RqvaeModel model;
  model.encoder = MlpNetwork::random(arch.encoder_sizes(), rng);
  model.decoder = MlpNetwork::random(arch.decoder_sizes(), rng);
  model.codebook = Codebook(arch.levels, arch.codes, arch.d_code);
  if (data.rows() == 0) return model;

  RowMatrix r = model.encoder.forward(data);
  for (int h = 0; h < arch.levels; ++h) {
    model.codebook.level(h) = kmeans(r, arch.codes, cfg.kmeans_iters, rng);
    for (Eigen::Index n = 0; n < r.rows(); ++n)
      r.row(n) -= model.codebook.code(h, nearest_code(model.codebook, h, r.row(n).transpose())).transpose();
  }
  return model;
}

namespace {

RowMatrix gather_rows(const RowMatrix& data, std::span<const Eigen::Index> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(rows[i]);
  return out;
}

}  // namespace

LossTerms evaluate(const RqvaeModel& model, const RowMatrix& data, const RqvaeTrainConfig& cfg) {
  LossTerms acc;
  const Eigen::Index n = data.rows();
  for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
    const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
    const RowMatrix x = data.middleRows(start, len);
    const CodeMatrix codes = assign_codes(model, model.encoder.forward(x), cfg);
    const LossTerms t = loss_and_gradient(model, x, codes, cfg.beta, nullptr);
    const double w = static_cast<double>(len) / static_cast<double>(n);
    acc.total += w * t.total;
    acc.recon += w * t.recon;
    acc.rq += w * t.rq;
  }
  return acc;
}

RqvaeTrainReport fit(RqvaeModel& model, const RowMatrix& data, const RqvaeTrainConfig& cfg, const EpochLogger& log) {
  if (!(cfg.beta > 0.0)) throw ConfigError("rqvae beta must be positive");
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("rqvae learning rate must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("rqvae batch size must be positive");

  RqvaeTrainReport report;
  const Eigen::Index n = data.rows();
  if (n == 0) return report;
  report.initial = evaluate(model, data, cfg);

  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt_enc(model.encoder.params().size(), opt_cfg);
  AdamW opt_dec(model.decoder.params().size(), opt_cfg);
  AdamW opt_cb(model.codebook.data().size(), opt_cfg);

  std::mt19937_64 rng(mix64(cfg.seed ^ 0x5eedULL));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int levels = model.codebook.levels();
  const int k_codes = model.codebook.codes();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> used(static_cast<std::size_t>(levels) * k_codes, 0);
    LossTerms acc;
    std::span<const Eigen::Index> last_batch;
    int batch_no = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
      last_batch = std::span<const Eigen::Index>(order).subspan(static_cast<std::size_t>(start),
                                                                static_cast<std::size_t>(len));
      const RowMatrix x = gather_rows(data, last_batch);
      const CodeMatrix codes = assign_codes(model, model.encoder.forward(x), cfg);
      RqvaeGradient grad;
      const LossTerms t = loss_and_gradient(model, x, codes, cfg.beta, &grad);
      if (!std::isfinite(t.total) || !grad.encoder.allFinite() || !grad.decoder.allFinite() ||
          !grad.codebook.allFinite())
        throw NumericalError(fmt::format("non-finite rqvae loss at epoch {}, batch {}", epoch + 1, batch_no + 1));
      for (Eigen::Index i = 0; i < codes.rows(); ++i)
        for (int h = 0; h < levels; ++h) used[static_cast<std::size_t>(h) * k_codes + codes(i, h)] = 1;

      opt_enc.step(model.encoder.params(), grad.encoder, cfg.learning_rate);
      opt_dec.step(model.decoder.params(), grad.decoder, cfg.learning_rate);
      opt_cb.step(model.codebook.data(), grad.codebook, cfg.learning_rate);

      const double w = static_cast<double>(len) / static_cast<double>(n);
      acc.total += w * t.total;
      acc.recon += w * t.recon;
      acc.rq += w * t.rq;
    }

    // Re-seeding is an update, so it is skipped when updates are disabled.
    if (cfg.dead_code_reset && cfg.learning_rate > 0.0) {
      std::vector<RowMatrix> residuals;
      quantize_batch(model.encoder.forward(gather_rows(data, last_batch)), model.codebook, &residuals);
      std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(last_batch.size()) - 1);
      for (int h = 0; h < levels; ++h)
        for (int k = 0; k < k_codes; ++k)
          if (!used[static_cast<std::size_t>(h) * k_codes + k])
            model.codebook.code(h, k) = residuals[static_cast<std::size_t>(h)].row(pick(rng)).transpose();
    }

    report.epochs.push_back(acc);
    if (log) log(epoch + 1, acc);
  }
  return report;
}

RqvaeTrained train(const EmbeddingMatrix& matrix, const RqvaeArch& arch, const RqvaeTrainConfig& cfg,
                   const EpochLogger& log) {
  RqvaeTrained out;
  out.model = init_model(arch, matrix.data(), cfg);
  out.report = fit(out.model, matrix.data(), cfg, log);
  return out;
}

Json to_json(const RqvaeArch& arch) {
  return Json{{"d_emb", arch.d_emb}, {"d_code", arch.d_code}, {"hidden", arch.hidden},
              {"levels", arch.levels}, {"codes", arch.codes}};
}

Json to_json(const RqvaeTrainConfig& c) {
  return Json{{"beta", c.beta},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"usm_enabled", c.usm_enabled},
              {"sinkhorn_epsilon", c.sinkhorn_epsilon},
              {"sinkhorn_iters", c.sinkhorn_iters},
              {"kmeans_iters", c.kmeans_iters},
              {"dead_code_reset", c.dead_code_reset}};
}

RqvaeArch arch_from_json(const Json& j) {
  RqvaeArch a;
  a.d_emb = j.value("d_emb", a.d_emb);
  a.d_code = j.value("d_code", a.d_code);
  a.hidden = j.value("hidden", a.hidden);
  a.levels = j.value("levels", a.levels);
  a.codes = j.value("codes", a.codes);
  return a;
}

RqvaeTrainConfig train_config_from_json(const Json& j, RqvaeTrainConfig c) {
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.usm_enabled = j.value("usm_enabled", c.usm_enabled);
  c.sinkhorn_epsilon = j.value("sinkhorn_epsilon", c.sinkhorn_epsilon);
  c.sinkhorn_iters = j.value("sinkhorn_iters", c.sinkhorn_iters);
  c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
  c.dead_code_reset = j.value("dead_code_reset", c.dead_code_reset);
  return c;
}

namespace {

Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const Json& j, Eigen::Index expected, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != expected)
    throw SchemaError(fmt::format("checkpoint field '{}' has the wrong length", what));
  Vector v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace

void save_checkpoint(const RqvaeModel& model, const RqvaeArch& arch, const RqvaeTrainConfig& cfg,
                     const std::filesystem::path& path, const Json& meta) {
  Json j;
  j["format"] = "semrec.rqvae";
  j["version"] = 1;
  j["arch"] = to_json(arch);
  j["config"] = to_json(cfg);
  j["encoder"] = {{"sizes", model.encoder.layer_sizes()}, {"params", vector_json(model.encoder.params())}};
  j["decoder"] = {{"sizes", model.decoder.layer_sizes()}, {"params", vector_json(model.decoder.params())}};
  j["codebook"] = {{"levels", model.codebook.levels()},
                   {"codes", model.codebook.codes()},
                   {"dim", model.codebook.dim()},
                   {"data", vector_json(model.codebook.data())}};
  j["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << j.dump() << '\n';
}

RqvaeCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open checkpoint '{}'", path.string()));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(fmt::format("checkpoint '{}': {}", path.string(), e.what()), 0, e.byte);
  }
  if (j.value("format", "") != "semrec.rqvae" || j.value("version", 0) != 1)
    throw SchemaError("not a version-1 rqvae checkpoint");
  try {
    RqvaeCheckpoint ck;
    ck.arch = arch_from_json(j.at("arch"));
    ck.config = train_config_from_json(j.at("config"));
    ck.model.encoder = MlpNetwork(j.at("encoder").at("sizes").get<std::vector<int>>());
    ck.model.encoder.params() =
        vector_from_json(j["encoder"].at("params"), ck.model.encoder.params().size(), "encoder.params");
    ck.model.decoder = MlpNetwork(j.at("decoder").at("sizes").get<std::vector<int>>());
    ck.model.decoder.params() =
        vector_from_json(j["decoder"].at("params"), ck.model.decoder.params().size(), "decoder.params");
    const auto& cb = j.at("codebook");
    ck.model.codebook = Codebook(cb.at("levels").get<int>(), cb.at("codes").get<int>(), cb.at("dim").get<int>());
    ck.model.codebook.data() = vector_from_json(cb.at("data"), ck.model.codebook.data().size(), "codebook.data");
    return ck;
  } catch (const Json::exception& e) {
    throw SchemaError(fmt::format("checkpoint '{}': {}", path.string(), e.what()));
  }
}

}  // namespace semrec
