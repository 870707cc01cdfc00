// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "semrec/errors.hpp"
#include "semrec/seqmodel.hpp"

using namespace semrec;

namespace {

SeqModelConfig tiny_config(int levels = 2, int codes = 4, int dim = 8, int heads = 2) {
  SeqModelConfig c;
  c.levels = levels;
  c.codes = codes;
  c.layers = 2;
  c.dim = dim;
  c.heads = heads;
  c.max_positions = 24;
  c.ffn_mult = 2;
  return c;
}

// Random model with weights large enough that every nonlinearity matters.
SeqModel lively_model(const SeqModelConfig& c, std::uint64_t seed) {
  SeqModel m = SeqModel::random(c, seed, 0.4);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.2);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] += n(rng);
  return m;
}

std::vector<int> random_tokens(const SeqModel& m, int len, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, m.vocab().size() - 1);
  std::vector<int> t(static_cast<std::size_t>(len));
  for (auto& x : t) x = pick(rng);
  return t;
}

// Scalar-loop reference forward pass reading parameters in their documented
// order: token table, position table, per block (ln1 g/b, Wq Wk Wv Wo, bq bk
// bv bo, ln2 g/b, W1 b1 W2 b2), final ln g/b. Returns T x V logits.
std::vector<std::vector<double>> reference_logits(const SeqModel& m, const std::vector<int>& tokens) {
  const auto& c = m.config();
  const int V = m.vocab().size(), N = c.max_positions, d = c.dim, f = c.dim * c.ffn_mult, H = c.heads, hd = d / H;
  const int T = static_cast<int>(tokens.size());
  const double* p = m.params().data();
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    const double* q = p + at;
    at += n;
    return q;
  };
  const double* tok = take(static_cast<std::size_t>(V * d));
  const double* pos = take(static_cast<std::size_t>(N * d));
  using Mat = std::vector<std::vector<double>>;
  auto zeros = [](int r, int cc) { return Mat(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(cc), 0.0)); };
  auto ln = [&](const Mat& x, const double* g, const double* b) {
    Mat y = x;
    for (auto& row : y) {
      double mu = 0, var = 0;
      for (double v : row) mu += v;
      mu /= static_cast<double>(row.size());
      for (double v : row) var += (v - mu) * (v - mu);
      var /= static_cast<double>(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
    }
    return y;
  };
  auto affine = [&](const Mat& x, const double* w, const double* b, int in, int out) {
    Mat y = zeros(static_cast<int>(x.size()), out);
    for (std::size_t r = 0; r < x.size(); ++r)
      for (int o = 0; o < out; ++o) {
        double s = b[o];
        for (int i = 0; i < in; ++i) s += x[r][static_cast<std::size_t>(i)] * w[i * out + o];
        y[r][static_cast<std::size_t>(o)] = s;
      }
    return y;
  };
  Mat x = zeros(T, d);
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j)
      x[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = tok[tokens[static_cast<std::size_t>(t)] * d + j] + pos[t * d + j];
  for (int l = 0; l < c.layers; ++l) {
    const double *g1 = take(static_cast<std::size_t>(d)), *b1n = take(static_cast<std::size_t>(d));
    const double *wq = take(static_cast<std::size_t>(d * d)), *wk = take(static_cast<std::size_t>(d * d)),
                 *wv = take(static_cast<std::size_t>(d * d)), *wo = take(static_cast<std::size_t>(d * d));
    const double *bq = take(static_cast<std::size_t>(d)), *bk = take(static_cast<std::size_t>(d)),
                 *bv = take(static_cast<std::size_t>(d)), *bo = take(static_cast<std::size_t>(d));
    const double *g2 = take(static_cast<std::size_t>(d)), *b2n = take(static_cast<std::size_t>(d));
    const double *w1 = take(static_cast<std::size_t>(d * f)), *b1 = take(static_cast<std::size_t>(f));
    const double *w2 = take(static_cast<std::size_t>(f * d)), *b2 = take(static_cast<std::size_t>(d));
    const Mat h = ln(x, g1, b1n);
    const Mat q = affine(h, wq, bq, d, d), k = affine(h, wk, bk, d, d), v = affine(h, wv, bv, d, d);
    Mat att = zeros(T, d);
    for (int hh = 0; hh < H; ++hh)
      for (int t = 0; t < T; ++t) {
        std::vector<double> s(static_cast<std::size_t>(t + 1));
        double mx = -1e300;
        for (int u = 0; u <= t; ++u) {
          double dot = 0;
          for (int j = hh * hd; j < (hh + 1) * hd; ++j) dot += q[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] * k[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)];
          s[static_cast<std::size_t>(u)] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[static_cast<std::size_t>(u)]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (int u = 0; u <= t; ++u)
          for (int j = hh * hd; j < (hh + 1) * hd; ++j)
            att[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] += s[static_cast<std::size_t>(u)] / z * v[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)];
      }
    const Mat o = affine(att, wo, bo, d, d);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] += o[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
    Mat u = affine(ln(x, g2, b2n), w1, b1, d, f);
    for (auto& row : u)
      for (auto& e : row) e = 0.5 * e * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (e + 0.044715 * e * e * e)));
    const Mat ff = affine(u, w2, b2, f, d);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] += ff[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
  }
  const double *gf = take(static_cast<std::size_t>(d)), *bf = take(static_cast<std::size_t>(d));
  REQUIRE(at == static_cast<std::size_t>(m.params().size()));
  const Mat hf = ln(x, gf, bf);
  Mat logits = zeros(T, V);
  for (int t = 0; t < T; ++t)
    for (int w = 0; w < V; ++w)
      for (int j = 0; j < d; ++j) logits[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)] += hf[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] * tok[w * d + j];
  return logits;
}

}  // namespace

TEST_CASE("token vocabulary has level-contiguous blocks") {
  TokenVocab v(3, 5);
  CHECK(v.size() == 3 * 5 + 4);
  std::set<int> seen;
  for (int h = 0; h < 3; ++h)
    for (int c = 0; c < 5; ++c) {
      const int t = v.token(h, c);
      CHECK(t == TokenVocab::kFirstIndex + h * 5 + c);
      CHECK(v.level_of(t) == h);
      CHECK(v.code_of(t) == c);
      CHECK(v.is_index(t));
      seen.insert(t);
    }
  CHECK(seen.size() == 15);
  CHECK_FALSE(v.is_index(TokenVocab::kSep));
  CHECK(v.name(v.token(1, 3)) == "<b_3>");
  CHECK_THROWS_AS(v.token(3, 0), RangeError);
}

TEST_CASE("encode_sequence layout") {
  TokenVocab v(2, 8);
  const auto seq = encode_sequence({SemanticIndex{{1, 2}}}, SemanticIndex{{3, 4}}, v, 128);
  CHECK(seq == std::vector<int>{TokenVocab::kBos, v.token(0, 1), v.token(1, 2), TokenVocab::kSep, v.token(0, 3),
                                v.token(1, 4), TokenVocab::kEos});
  CHECK(encode_sequence({}, std::nullopt, v, 128) == std::vector<int>{TokenVocab::kBos, TokenVocab::kSep});

  std::vector<SemanticIndex> hist;
  for (int i = 0; i < 21; ++i) hist.push_back(SemanticIndex{{i % 8, (i / 8) % 8}});
  const auto window = encode_sequence(hist, std::nullopt, v, 128, 20);
  CHECK(window.size() == 2 + 20 * 2);
  CHECK(window[1] == v.token(0, hist[1].codes[0]));
  CHECK(window[2] == v.token(1, hist[1].codes[1]));

  // Position budget drops whole items from the left.
  const auto tight = encode_sequence(hist, SemanticIndex{{0, 0}}, v, 12, 20);
  CHECK(tight.size() <= 12);
  CHECK(tight.front() == TokenVocab::kBos);
  CHECK(tight[1] == v.token(0, hist[21 - 3].codes[0]));
}

TEST_CASE("logits match a scalar reference forward pass") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 5);
  std::mt19937_64 rng(9);
  const auto tokens = random_tokens(m, 11, rng);
  const RowMatrix got = m.logits(tokens);
  const auto want = reference_logits(m, tokens);
  double worst = 0;
  for (std::size_t t = 0; t < want.size(); ++t)
    for (std::size_t w = 0; w < want[t].size(); ++w)
      worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(w)) - want[t][w]));
  CHECK(worst < 1e-10);
}

TEST_CASE("nll: uniform model gives T ln V") {
  const auto cfg = tiny_config(3, 6);
  const SeqModel m(cfg);  // zero embeddings -> zero logits
  TokenVocab v(3, 6);
  const auto tokens = encode_sequence({SemanticIndex{{1, 2, 3}}}, SemanticIndex{{0, 5, 4}}, v, cfg.max_positions);
  SeqExample ex{tokens, 5};
  const double T = 4.0;  // three index tokens and EOS
  CHECK(m.nll(std::span(&ex, 1)) == doctest::Approx(T * std::log(v.size())).epsilon(1e-12));
}

TEST_CASE("nll: certain model gives zero") {
  auto cfg = tiny_config(1, 2, 8, 1);
  cfg.layers = 1;
  SeqModel m(cfg);
  // Every output row is a scaled copy of the LayerNorm bias; point it at the target token.
  // With zero-gain LayerNorm the final hidden state equals its bias for every position.
  const int V = m.vocab().size(), d = cfg.dim;
  const Eigen::Index lnf_g = m.params().size() - 2 * d;
  m.params().segment(lnf_g, d).setZero();
  m.params().segment(lnf_g + d, d).setZero();
  m.params()[lnf_g + d] = 1.0;
  const int target = TokenVocab::kEos;
  m.params()[target * d + 0] = 2000.0;  // token row `target`, first coordinate
  for (int w = 0; w < V; ++w)
    if (w != target) m.params()[w * d + 0] = 0.0;
  SeqExample ex{{TokenVocab::kBos, TokenVocab::kSep, TokenVocab::kEos}, 2};
  CHECK(m.nll(std::span(&ex, 1)) < 1e-12);
}

TEST_CASE("nll matches a token-by-token softmax oracle") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 11);
  std::mt19937_64 rng(3);
  std::vector<SeqExample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({random_tokens(m, 9 + i, rng), 4 + i});
  double oracle = 0;
  for (const auto& ex : batch) {
    const auto logits = reference_logits(m, ex.tokens);
    for (std::size_t t = static_cast<std::size_t>(ex.target_start); t < ex.tokens.size(); ++t) {
      const auto& row = logits[t - 1];
      double z = 0;
      for (double l : row) z += std::exp(l);
      oracle -= std::log(std::exp(row[static_cast<std::size_t>(ex.tokens[t])]) / z);
    }
  }
  oracle /= 3.0;
  CHECK(m.nll(batch) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("causality: later tokens never change earlier logits") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 21);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto tokens = random_tokens(m, 12, rng);
    const RowMatrix base = m.logits(tokens);
    const int t = 1 + static_cast<int>(rng() % 11);
    tokens[static_cast<std::size_t>(t)] = (tokens[static_cast<std::size_t>(t)] + 1) % m.vocab().size();
    const RowMatrix moved = m.logits(tokens);
    CHECK((base.topRows(t) - moved.topRows(t)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((base.row(t) - moved.row(t)).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("nll gradient passes a finite-difference check") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 31);
  std::mt19937_64 rng(8);
  std::vector<SeqExample> batch{{random_tokens(m, 8, rng), 3}, {random_tokens(m, 6, rng), 4}};
  CHECK(seq_grad_check(m, batch) < 1e-4);
  CHECK(seq_grad_check(m, batch, 1e-4, 1e-2) > 1e-4);
}

TEST_CASE("cached decoding agrees with full recomputation") {
  const auto cfg = tiny_config(3, 8, 16, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SeqModel m = lively_model(cfg, 100 + seed);
    std::mt19937_64 rng(seed);
    const auto tokens = random_tokens(m, 10, rng);
    DecodeCache cache = m.new_cache();
    double worst = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const Vector cached = m.decode_step(cache, tokens[t]);
      const RowMatrix full = m.logits(std::span(tokens.data(), t + 1));
      const double gap = (cached.transpose() - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff();
      if (t == 0) CHECK(gap == 0.0);
      worst = std::max(worst, gap);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("shared-prefix caches branch deterministically") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 7);
  DecodeCache shared;
  const std::vector<int> prefix{1, 5, 6, 3};
  m.prefill(shared, prefix);
  DecodeCache a = shared, b = shared;
  DecodeCache fresh;
  m.prefill(fresh, prefix);
  const Vector la = m.decode_step(a, 7), lb = m.decode_step(b, 7), lf = m.decode_step(fresh, 7);
  CHECK(la == lb);
  CHECK(la == lf);
  CHECK(shared.length == 4);
}

TEST_CASE("checkpoint round trip is exact") {
  const auto cfg = tiny_config();
  const SeqModel m = lively_model(cfg, 13);
  const auto path = std::filesystem::temp_directory_path() / "semrec_seqmodel_roundtrip.json";
  save_seq_model(m, path, {{"seed", 13}});
  const SeqModel back = load_seq_model(path);
  CHECK(back == m);
  std::filesystem::remove(path);
}

TEST_CASE("bad shapes are rejected") {
  auto cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(SeqModel{cfg}, ConfigError);
  const SeqModel m(tiny_config());
  std::vector<int> long_seq(30, 1);
  CHECK_THROWS_AS(m.logits(long_seq), DomainError);
  CHECK_THROWS_AS(m.logits(std::vector<int>{999}), RangeError);
}
