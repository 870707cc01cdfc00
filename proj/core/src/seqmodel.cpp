// SPDX-License-Identifier: Apache-2.0
#include "semrec/seqmodel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "semrec/errors.hpp"

namespace semrec {

TokenVocab::TokenVocab(int levels, int codes) : levels_(levels), codes_(codes) {
  if (levels < 1 || codes < 1) throw ConfigError(fmt::format("vocabulary needs H >= 1 and K >= 1, got {}x{}", levels, codes));
}

int TokenVocab::token(int level, int code) const {
  if (level < 0 || level >= levels_ || code < 0 || code >= codes_)
    throw RangeError(fmt::format("code ({}, {}) outside a {}x{} codebook", level, code, levels_, codes_));
  return kFirstIndex + level * codes_ + code;
}

std::string TokenVocab::name(int token) const {
  switch (token) {
    case kPad: return "[PAD]";
    case kBos: return "[BOS]";
    case kEos: return "[EOS]";
    case kSep: return "[SEP]";
    default: break;
  }
  if (!is_index(token)) return fmt::format("[UNK{}]", token);
  return fmt::format("<{}_{}>", static_cast<char>('a' + level_of(token)), code_of(token));
}

std::vector<int> encode_sequence(const std::vector<SemanticIndex>& history, const std::optional<SemanticIndex>& target,
                                 const TokenVocab& vocab, int max_positions, int max_items) {
  const auto per_item = static_cast<std::size_t>(vocab.levels());
  const std::size_t fixed = 2 + (target ? per_item + 1 : 0);
  if (fixed > static_cast<std::size_t>(max_positions))
    throw ConfigError(fmt::format("max_positions {} cannot hold an empty history", max_positions));
  std::size_t keep = std::min(history.size(), static_cast<std::size_t>(std::max(max_items, 0)));
  keep = std::min(keep, (static_cast<std::size_t>(max_positions) - fixed) / per_item);

  auto append = [&](std::vector<int>& out, const SemanticIndex& idx) {
    if (idx.levels() != vocab.levels())
      throw RangeError(fmt::format("index has {} levels, vocabulary expects {}", idx.levels(), vocab.levels()));
    for (int h = 0; h < vocab.levels(); ++h) out.push_back(vocab.token(h, idx.codes[static_cast<std::size_t>(h)]));
  };
  std::vector<int> out;
  out.reserve(fixed + keep * per_item);
  out.push_back(TokenVocab::kBos);
  for (std::size_t i = history.size() - keep; i < history.size(); ++i) append(out, history[i]);
  out.push_back(TokenVocab::kSep);
  if (target) {
    append(out, *target);
    out.push_back(TokenVocab::kEos);
  }
  return out;
}

Json to_json(const SeqModelConfig& cfg) {
  return Json{{"levels", cfg.levels}, {"codes", cfg.codes},     {"layers", cfg.layers},
              {"dim", cfg.dim},       {"heads", cfg.heads},     {"max_positions", cfg.max_positions},
              {"ffn_mult", cfg.ffn_mult}};
}

SeqModelConfig seq_config_from_json(const Json& j, SeqModelConfig d) {
  try {
    d.levels = j.value("levels", d.levels);
    d.codes = j.value("codes", d.codes);
    d.layers = j.value("layers", d.layers);
    d.dim = j.value("dim", d.dim);
    d.heads = j.value("heads", d.heads);
    d.max_positions = j.value("max_positions", d.max_positions);
    d.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("bad sequence model config: {}", e.what()));
  }
  return d;
}

// Offsets into the flat parameter vector.
struct SeqModel::Layout {
  struct Block {
    Eigen::Index ln1_g, ln1_b, wq, wk, wv, wo, bq, bk, bv, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  Eigen::Index tok = 0, pos = 0, lnf_g = 0, lnf_b = 0, total = 0;
  std::vector<Block> blocks;
  int V = 0, N = 0, d = 0, f = 0;

  explicit Layout(const SeqModelConfig& c) : V(TokenVocab(c.levels, c.codes).size()), N(c.max_positions), d(c.dim), f(c.dim * c.ffn_mult) {
    Eigen::Index at = 0;
    auto take = [&](Eigen::Index n) {
      const Eigen::Index o = at;
      at += n;
      return o;
    };
    tok = take(Eigen::Index{V} * d);
    pos = take(Eigen::Index{N} * d);
    for (int l = 0; l < c.layers; ++l) {
      Block b{};
      b.ln1_g = take(d);
      b.ln1_b = take(d);
      b.wq = take(Eigen::Index{d} * d);
      b.wk = take(Eigen::Index{d} * d);
      b.wv = take(Eigen::Index{d} * d);
      b.wo = take(Eigen::Index{d} * d);
      b.bq = take(d);
      b.bk = take(d);
      b.bv = take(d);
      b.bo = take(d);
      b.ln2_g = take(d);
      b.ln2_b = take(d);
      b.w1 = take(Eigen::Index{d} * f);
      b.b1 = take(f);
      b.w2 = take(Eigen::Index{f} * d);
      b.b2 = take(d);
      blocks.push_back(b);
    }
    lnf_g = take(d);
    lnf_b = take(d);
    total = at;
  }
};

namespace {

using Layout = SeqModel::Layout;
using CMat = Eigen::Map<const RowMatrix>;
using MMat = Eigen::Map<RowMatrix>;
using CVec = Eigen::Map<const Eigen::RowVectorXd>;
using MVec = Eigen::Map<Eigen::RowVectorXd>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

CMat cmat(const Vector& p, Eigen::Index off, Eigen::Index r, Eigen::Index c) { return CMat(p.data() + off, r, c); }
MMat mmat(Vector& p, Eigen::Index off, Eigen::Index r, Eigen::Index c) { return MMat(p.data() + off, r, c); }
CVec cvec(const Vector& p, Eigen::Index off, Eigen::Index n) { return CVec(p.data() + off, n); }
MVec mvec(Vector& p, Eigen::Index off, Eigen::Index n) { return MVec(p.data() + off, n); }

struct LnOut {
  RowMatrix xhat;
  Vector rstd;
  RowMatrix y;
};

LnOut layer_norm(const RowMatrix& x, const CVec& g, const CVec& b) {
  LnOut o;
  const Eigen::Index n = x.rows();
  o.xhat.resize(n, x.cols());
  o.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    o.rstd[i] = 1.0 / std::sqrt(var + kLnEps);
    o.xhat.row(i) = (x.row(i).array() - mu) * o.rstd[i];
  }
  o.y = (o.xhat.array().rowwise() * g.array()).rowwise() + b.array();
  return o;
}

RowMatrix layer_norm_backward(const RowMatrix& dy, const LnOut& ln, const CVec& g, MVec dg, MVec db) {
  dg += (dy.array() * ln.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const RowMatrix dxhat = dy.array().rowwise() * g.array();
  RowMatrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * ln.xhat.row(i).array()).mean();
    dx.row(i) = ln.rstd[i] * (dxhat.row(i).array() - m1 - ln.xhat.row(i).array() * m2);
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct BlockTrace {
  LnOut ln1;
  RowMatrix q, k, v;
  std::vector<RowMatrix> probs;  // per head, T x T (lower triangular)
  RowMatrix att;
  LnOut ln2;
  RowMatrix u;
  RowMatrix g;
};

// Row-wise softmax of a causal score matrix in place; entries above the diagonal become zero.
void causal_softmax(RowMatrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i).head(i + 1);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
    s.row(i).tail(s.cols() - i - 1).setZero();
  }
}

void log_softmax_inplace(Eigen::Ref<Eigen::RowVectorXd> z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  z.array() -= lse;
}

}  // namespace

SeqModel::SeqModel(const SeqModelConfig& cfg) : cfg_(cfg) {
  if (cfg.levels < 1 || cfg.codes < 1 || cfg.layers < 1 || cfg.dim < 1 || cfg.heads < 1 || cfg.max_positions < 4 ||
      cfg.ffn_mult < 1)
    throw ConfigError("sequence model sizes must be positive (max_positions >= 4)");
  if (cfg.dim % cfg.heads != 0)
    throw ConfigError(fmt::format("dim {} is not divisible by {} heads", cfg.dim, cfg.heads));
  vocab_ = TokenVocab(cfg.levels, cfg.codes);
  const Layout lay(cfg);
  params_ = Vector::Zero(lay.total);
  for (const auto& b : lay.blocks) {
    params_.segment(b.ln1_g, cfg.dim).setOnes();
    params_.segment(b.ln2_g, cfg.dim).setOnes();
  }
  params_.segment(lay.lnf_g, cfg.dim).setOnes();
}

SeqModel SeqModel::random(const SeqModelConfig& cfg, std::uint64_t seed, double init_std) {
  SeqModel m(cfg);
  const Layout lay(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  auto fill = [&](Eigen::Index off, Eigen::Index n, double scale) {
    for (Eigen::Index i = 0; i < n; ++i) m.params_[off + i] = scale * normal(rng);
  };
  const Eigen::Index d = cfg.dim, f = lay.f;
  const double resid = 1.0 / std::sqrt(2.0 * cfg.layers);
  fill(lay.tok, Eigen::Index{lay.V} * d, 1.0);
  fill(lay.pos, Eigen::Index{lay.N} * d, 1.0);
  for (const auto& b : lay.blocks) {
    fill(b.wq, d * d, 1.0);
    fill(b.wk, d * d, 1.0);
    fill(b.wv, d * d, 1.0);
    fill(b.wo, d * d, resid);
    fill(b.w1, d * f, 1.0);
    fill(b.w2, f * d, resid);
  }
  return m;
}

void SeqModel::validate_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw DomainError("empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg_.max_positions))
    throw DomainError(fmt::format("sequence of {} tokens exceeds max_positions {}", tokens.size(), cfg_.max_positions));
  for (int t : tokens)
    if (t < 0 || t >= vocab_.size()) throw RangeError(fmt::format("token id {} outside vocabulary", t));
}

namespace {

// Full forward pass; block traces are kept only when `keep` is set.
struct ForwardOut {
  std::vector<BlockTrace> blocks;
  LnOut lnf;
};

ForwardOut forward_full(const Vector& p, const Layout& lay, const SeqModelConfig& cfg, std::span<const int> tokens,
                        bool keep) {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = lay.d, f = lay.f;
  const int H = cfg.heads;
  const Eigen::Index hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const CMat tok = cmat(p, lay.tok, lay.V, d);
  const CMat pos = cmat(p, lay.pos, lay.N, d);

  ForwardOut out;
  RowMatrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = tok.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);

  for (const auto& b : lay.blocks) {
    BlockTrace tr;
    tr.ln1 = layer_norm(x, cvec(p, b.ln1_g, d), cvec(p, b.ln1_b, d));
    tr.q = (tr.ln1.y * cmat(p, b.wq, d, d)).rowwise() + cvec(p, b.bq, d);
    tr.k = (tr.ln1.y * cmat(p, b.wk, d, d)).rowwise() + cvec(p, b.bk, d);
    tr.v = (tr.ln1.y * cmat(p, b.wv, d, d)).rowwise() + cvec(p, b.bv, d);
    tr.att.resize(T, d);
    for (int h = 0; h < H; ++h) {
      RowMatrix s = scale * (tr.q.middleCols(h * hd, hd) * tr.k.middleCols(h * hd, hd).transpose());
      causal_softmax(s);
      tr.att.middleCols(h * hd, hd) = s * tr.v.middleCols(h * hd, hd);
      if (keep) tr.probs.push_back(std::move(s));
    }
    RowMatrix x_mid = x + ((tr.att * cmat(p, b.wo, d, d)).rowwise() + cvec(p, b.bo, d));
    tr.ln2 = layer_norm(x_mid, cvec(p, b.ln2_g, d), cvec(p, b.ln2_b, d));
    tr.u = (tr.ln2.y * cmat(p, b.w1, d, f)).rowwise() + cvec(p, b.b1, f);
    tr.g = tr.u.unaryExpr(&gelu);
    RowMatrix x_out = x_mid + ((tr.g * cmat(p, b.w2, f, d)).rowwise() + cvec(p, b.b2, d));
    if (keep) out.blocks.push_back(std::move(tr));
    x = std::move(x_out);
  }
  out.lnf = layer_norm(x, cvec(p, lay.lnf_g, d), cvec(p, lay.lnf_b, d));
  return out;
}

}  // namespace

RowMatrix SeqModel::logits(std::span<const int> tokens) const {
  validate_tokens(tokens);
  const Layout lay(cfg_);
  const ForwardOut fo = forward_full(params_, lay, cfg_, tokens, false);
  return fo.lnf.y * cmat(params_, lay.tok, lay.V, lay.d).transpose();
}

DecodeCache SeqModel::new_cache() const {
  DecodeCache c;
  c.keys.assign(static_cast<std::size_t>(cfg_.layers), RowMatrix(0, cfg_.dim));
  c.values.assign(static_cast<std::size_t>(cfg_.layers), RowMatrix(0, cfg_.dim));
  return c;
}

namespace {

// One-token step; returns the final hidden state (before the output projection).
Eigen::RowVectorXd step_hidden(const Vector& p, const Layout& lay, const SeqModelConfig& cfg, DecodeCache& cache,
                               int token) {
  const Eigen::Index d = lay.d, f = lay.f;
  const int H = cfg.heads;
  const Eigen::Index hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Eigen::Index t = cache.length;

  RowMatrix x = cmat(p, lay.tok, lay.V, d).row(token) + cmat(p, lay.pos, lay.N, d).row(t);
  for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& b = lay.blocks[l];
    const LnOut ln1 = layer_norm(x, cvec(p, b.ln1_g, d), cvec(p, b.ln1_b, d));
    const Eigen::RowVectorXd q = ln1.y * cmat(p, b.wq, d, d) + cvec(p, b.bq, d);
    RowMatrix& K = cache.keys[l];
    RowMatrix& Vv = cache.values[l];
    K.conservativeResize(t + 1, d);
    Vv.conservativeResize(t + 1, d);
    K.row(t) = ln1.y * cmat(p, b.wk, d, d) + cvec(p, b.bk, d);
    Vv.row(t) = ln1.y * cmat(p, b.wv, d, d) + cvec(p, b.bv, d);
    Eigen::RowVectorXd att(d);
    for (int h = 0; h < H; ++h) {
      Eigen::RowVectorXd s = scale * (q.segment(h * hd, hd) * K.middleCols(h * hd, hd).transpose());
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      att.segment(h * hd, hd) = s * Vv.middleCols(h * hd, hd);
    }
    x += att * cmat(p, b.wo, d, d) + cvec(p, b.bo, d);
    const LnOut ln2 = layer_norm(x, cvec(p, b.ln2_g, d), cvec(p, b.ln2_b, d));
    const RowMatrix g = ((ln2.y * cmat(p, b.w1, d, f)).rowwise() + cvec(p, b.b1, f)).unaryExpr(&gelu);
    x += g * cmat(p, b.w2, f, d) + cvec(p, b.b2, d);
  }
  ++cache.length;
  return layer_norm(x, cvec(p, lay.lnf_g, d), cvec(p, lay.lnf_b, d)).y.row(0);
}

}  // namespace

Vector SeqModel::decode_step(DecodeCache& cache, int token) const {
  if (token < 0 || token >= vocab_.size()) throw RangeError(fmt::format("token id {} outside vocabulary", token));
  if (cache.length >= cfg_.max_positions)
    throw DomainError(fmt::format("decode cache is full at {} positions", cfg_.max_positions));
  if (cache.keys.size() != static_cast<std::size_t>(cfg_.layers)) throw DomainError("decode cache does not match model");
  const Layout lay(cfg_);
  const Eigen::RowVectorXd hidden = step_hidden(params_, lay, cfg_, cache, token);
  return cmat(params_, lay.tok, lay.V, lay.d) * hidden.transpose();
}

Vector SeqModel::prefill(DecodeCache& cache, std::span<const int> tokens) const {
  validate_tokens(tokens);
  cache = new_cache();
  const Layout lay(cfg_);
  Eigen::RowVectorXd hidden;
  for (int t : tokens) hidden = step_hidden(params_, lay, cfg_, cache, t);
  return cmat(params_, lay.tok, lay.V, lay.d) * hidden.transpose();
}

double SeqModel::example_nll(const SeqExample& ex, Vector* grad) const {
  validate_tokens(ex.tokens);
  const auto T = static_cast<Eigen::Index>(ex.tokens.size());
  if (ex.target_start < 1 || ex.target_start >= T)
    throw DomainError(fmt::format("target_start {} outside a {}-token example", ex.target_start, T));
  const Layout lay(cfg_);
  const Eigen::Index d = lay.d, f = lay.f;
  const ForwardOut fo = forward_full(params_, lay, cfg_, ex.tokens, grad != nullptr);

  // Rows predicting tokens[target_start..T-1].
  const Eigen::Index first = ex.target_start - 1;
  const Eigen::Index n = T - ex.target_start;
  const CMat tok = cmat(params_, lay.tok, lay.V, d);
  RowMatrix logp = fo.lnf.y.middleRows(first, n) * tok.transpose();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    log_softmax_inplace(logp.row(i));
    loss -= logp(i, ex.tokens[static_cast<std::size_t>(ex.target_start + i)]);
  }
  if (!grad) return loss;

  Vector& G = *grad;
  RowMatrix dlogits = logp.array().exp();
  for (Eigen::Index i = 0; i < n; ++i) dlogits(i, ex.tokens[static_cast<std::size_t>(ex.target_start + i)]) -= 1.0;
  MMat dtok = mmat(G, lay.tok, lay.V, d);
  dtok.noalias() += dlogits.transpose() * fo.lnf.y.middleRows(first, n);
  RowMatrix dhf = RowMatrix::Zero(T, d);
  dhf.middleRows(first, n) = dlogits * tok;

  RowMatrix dx = layer_norm_backward(dhf, fo.lnf, cvec(params_, lay.lnf_g, d), mvec(G, lay.lnf_g, d),
                                     mvec(G, lay.lnf_b, d));
  const int H = cfg_.heads;
  const Eigen::Index hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t li = lay.blocks.size(); li-- > 0;) {
    const auto& b = lay.blocks[li];
    const BlockTrace& tr = fo.blocks[li];
    // Feed-forward: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2.
    mmat(G, b.w2, f, d).noalias() += tr.g.transpose() * dx;
    mvec(G, b.b2, d) += dx.colwise().sum();
    RowMatrix du = (dx * cmat(params_, b.w2, f, d).transpose()).array() * tr.u.unaryExpr(&gelu_grad).array();
    mmat(G, b.w1, d, f).noalias() += tr.ln2.y.transpose() * du;
    mvec(G, b.b1, f) += du.colwise().sum();
    const RowMatrix dh2 = du * cmat(params_, b.w1, d, f).transpose();
    dx += layer_norm_backward(dh2, tr.ln2, cvec(params_, b.ln2_g, d), mvec(G, b.ln2_g, d), mvec(G, b.ln2_b, d));

    // Attention: x_mid = x + att Wo + bo.
    mmat(G, b.wo, d, d).noalias() += tr.att.transpose() * dx;
    mvec(G, b.bo, d) += dx.colwise().sum();
    const RowMatrix datt = dx * cmat(params_, b.wo, d, d).transpose();
    RowMatrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const RowMatrix& P = tr.probs[static_cast<std::size_t>(h)];
      const auto dah = datt.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd) = P.transpose() * dah;
      RowMatrix dP = dah * tr.v.middleCols(h * hd, hd).transpose();
      const Eigen::VectorXd rows = (dP.array() * P.array()).rowwise().sum();
      RowMatrix dS = P.array() * (dP.colwise() - rows).array();
      dS *= scale;
      dq.middleCols(h * hd, hd) = dS * tr.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = dS.transpose() * tr.q.middleCols(h * hd, hd);
    }
    const RowMatrix& h1 = tr.ln1.y;
    mmat(G, b.wq, d, d).noalias() += h1.transpose() * dq;
    mmat(G, b.wk, d, d).noalias() += h1.transpose() * dk;
    mmat(G, b.wv, d, d).noalias() += h1.transpose() * dv;
    mvec(G, b.bq, d) += dq.colwise().sum();
    mvec(G, b.bk, d) += dk.colwise().sum();
    mvec(G, b.bv, d) += dv.colwise().sum();
    const RowMatrix dh1 = dq * cmat(params_, b.wq, d, d).transpose() + dk * cmat(params_, b.wk, d, d).transpose() +
                          dv * cmat(params_, b.wv, d, d).transpose();
    dx += layer_norm_backward(dh1, tr.ln1, cvec(params_, b.ln1_g, d), mvec(G, b.ln1_g, d), mvec(G, b.ln1_b, d));
  }
  MMat dpos = mmat(G, lay.pos, lay.N, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    dtok.row(ex.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
  return loss;
}

double SeqModel::nll(std::span<const SeqExample> batch, Vector* grad) const {
  if (batch.empty()) throw DomainError("nll of an empty batch");
  if (grad) *grad = Vector::Zero(params_.size());
  double total = 0.0;
  for (const auto& ex : batch) total += example_nll(ex, grad);
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grad) *grad *= inv;
  return total * inv;
}

double seq_grad_check(const SeqModel& model, std::span<const SeqExample> batch, double step, double corrupt,
                      double floor) {
  Vector analytic;
  model.nll(batch, &analytic);
  if (analytic.size() > 0) analytic[0] += corrupt;
  SeqModel probe = model;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < probe.params().size(); ++i) {
    const double saved = probe.params()[i];
    probe.params()[i] = saved + step;
    const double up = probe.nll(batch);
    probe.params()[i] = saved - step;
    const double down = probe.nll(batch);
    probe.params()[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

Json seq_model_to_json(const SeqModel& model) {
  const Vector& p = model.params();
  return Json{{"format", "semrec.seqmodel"},
              {"version", 1},
              {"config", to_json(model.config())},
              {"params", std::vector<double>(p.data(), p.data() + p.size())}};
}

SeqModel seq_model_from_json(const Json& j) {
  if (j.value("format", "") != "semrec.seqmodel" || j.value("version", 0) != 1)
    throw SchemaError("not a version 1 sequence model checkpoint");
  SeqModel m(seq_config_from_json(j.at("config")));
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(params.size()) != m.params().size())
    throw SchemaError(fmt::format("checkpoint holds {} parameters, configuration needs {}", params.size(),
                                  m.params().size()));
  m.params() = Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
  return m;
}

void save_seq_model(const SeqModel& model, const std::filesystem::path& path, const Json& meta) {
  Json j = seq_model_to_json(model);
  j["meta"] = meta;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << j.dump() << '\n';
}

SeqModel load_seq_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(fmt::format("'{}': {}", path.string(), e.what()), 0, e.byte);
  }
  try {
    return seq_model_from_json(j);
  } catch (const Json::exception& e) {
    throw SchemaError(fmt::format("'{}': {}", path.string(), e.what()));
  }
}

}  // namespace semrec
