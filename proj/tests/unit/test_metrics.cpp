// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "semrec/errors.hpp"
#include "semrec/metrics.hpp"
#include "test_util.hpp"

using namespace semrec;

namespace {

// Ranked list of `len` items with the truth at `rank` (0 = absent).
RankedPrediction at_rank(int rank, int len = 20, const std::string& user = "u") {
  RankedPrediction p{user, {}, "truth"};
  for (int r = 1; r <= len; ++r) p.ranked.push_back(r == rank ? "truth" : "x" + std::to_string(r));
  return p;
}

std::vector<RankedPrediction> random_set(std::mt19937_64& rng, int users) {
  std::uniform_int_distribution<int> rank(0, 25), len(0, 20);
  std::vector<RankedPrediction> out;
  for (int u = 0; u < users; ++u) {
    const int l = len(rng), r = rank(rng);
    out.push_back(at_rank(r <= l ? r : 0, l, "u" + std::to_string(u)));
  }
  return out;
}

}  // namespace

TEST_CASE("HR examples") {
  std::vector<RankedPrediction> one{at_rank(1)};
  CHECK(hr_at_k(one, 1) == 1.0);
  std::vector<RankedPrediction> six{at_rank(6)};
  CHECK(hr_at_k(six, 5) == 0.0);
  CHECK(hr_at_k(six, 6) == 1.0);
}

TEST_CASE("HR on a mixed ten-user set equals a hand count") {
  // Truth ranks: 1, 3, 0 (absent), 10, 11, 2, 5, 0, 7, 4.
  const std::vector<int> ranks{1, 3, 0, 10, 11, 2, 5, 0, 7, 4};
  std::vector<RankedPrediction> preds;
  for (std::size_t i = 0; i < ranks.size(); ++i) preds.push_back(at_rank(ranks[i], 20, "u" + std::to_string(i)));
  CHECK(hr_at_k(preds, 1) == 0.1);
  CHECK(hr_at_k(preds, 5) == 0.5);    // 1, 3, 2, 5, 4
  CHECK(hr_at_k(preds, 10) == 0.7);   // plus 10, 7
  CHECK(hr_at_k(preds, 20) == 0.8);   // plus 11
  const double ndcg5 = (1.0 + 1.0 / std::log2(4.0) + 1.0 / std::log2(3.0) + 1.0 / std::log2(6.0) + 1.0 / std::log2(5.0)) / 10.0;
  CHECK(std::abs(ndcg_at_k(preds, 5) - ndcg5) < 1e-12);
}

TEST_CASE("NDCG examples") {
  std::vector<RankedPrediction> r1{at_rank(1)}, r2{at_rank(2)}, r11{at_rank(11)};
  CHECK(ndcg_at_k(r1, 1) == 1.0);
  CHECK(std::abs(ndcg_at_k(r2, 5) - 1.0 / std::log2(3.0)) < 1e-9);
  CHECK(std::abs(ndcg_at_k(r2, 5) - 0.63093) < 1e-5);
  CHECK(ndcg_at_k(r11, 10) == 0.0);
}

TEST_CASE("short lists count missing ranks as misses") {
  std::vector<RankedPrediction> p{at_rank(0, 3), at_rank(3, 3)};
  CHECK(hr_at_k(p, 10) == 0.5);
  CHECK(truth_rank(p[0]) == 0);
  CHECK(truth_rank(p[1]) == 3);
}

TEST_CASE("metric argument errors") {
  std::vector<RankedPrediction> p{at_rank(1)};
  CHECK_THROWS_AS(hr_at_k(p, 0), DomainError);
  CHECK_THROWS_AS(ndcg_at_k(p, 0), DomainError);
  CHECK_THROWS_AS(hr_at_k(std::span<const RankedPrediction>{}, 1), DomainError);
  std::vector<RankedPrediction> dup{{"u", {"a", "b", "a"}, "b"}};
  CHECK_THROWS_AS(hr_at_k(dup, 2), UniquenessError);
  CHECK_THROWS_AS(ndcg_at_k(dup, 2), UniquenessError);
}

TEST_CASE("metrics are bounded and monotone in k on 100 random sets") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_set(rng, 30);
    double prev_hr = 0.0, prev_ndcg = 0.0;
    for (int k = 1; k <= 25; ++k) {
      const double hr = hr_at_k(preds, k), nd = ndcg_at_k(preds, k);
      CHECK(0.0 <= nd);
      CHECK(nd <= hr + 1e-15);
      CHECK(hr <= 1.0);
      CHECK(hr >= prev_hr);
      CHECK(nd >= prev_ndcg);
      prev_hr = hr;
      prev_ndcg = nd;
    }
  }
}

TEST_CASE("prediction dumps round-trip and group by user") {
  testing::TempDir dir("metrics");
  const std::vector<PredictionRow> rows{
      {"u1", 1, "a", -0.5}, {"u1", 2, "b", -1.25}, {"u2", 1, "c", -3.0000000000000004}, {"u2", 2, "a", -1e-300}};
  save_predictions(rows, dir / "p.tsv");
  CHECK(load_predictions(dir / "p.tsv") == rows);
  CHECK(testing::read_file(dir / "p.tsv").rfind("user_id\trank\titem_id\tlogprob\n", 0) == 0);

  const auto grouped = group_predictions(rows, {{"u1", "b"}, {"u2", "z"}, {"u3", "a"}});
  REQUIRE(grouped.size() == 3);
  CHECK(grouped[0].ranked == std::vector<std::string>{"a", "b"});
  CHECK(truth_rank(grouped[0]) == 2);
  CHECK(grouped[2].ranked.empty());
  CHECK_THROWS_AS(group_predictions(rows, {{"u1", "b"}}), DomainError);

  testing::write_file(dir / "bad.tsv", "user_id\trank\titem_id\tlogprob\nu1\tone\ta\t0\n");
  CHECK_THROWS_AS(load_predictions(dir / "bad.tsv"), ParseError);
}

TEST_CASE("metrics_report and average_reports") {
  std::vector<RankedPrediction> preds{at_rank(1, 20, "a"), at_rank(2, 20, "b"), at_rank(0, 20, "c"), at_rank(7, 20, "d")};
  const Json r = metrics_report(preds, {1, 5, 10});
  CHECK(r["users"] == 4);
  CHECK(r["HR@1"].get<double>() == 0.25);
  CHECK(r["HR@5"].get<double>() == 0.5);
  CHECK(r["HR@10"].get<double>() == 0.75);
  CHECK(std::abs(r["NDCG@10"].get<double>() - (1.0 + 1.0 / std::log2(3.0) + 1.0 / std::log2(8.0)) / 4.0) < 1e-12);

  Json other = r;
  other["HR@1"] = 0.75;
  const Json avg = average_reports({r, other});
  CHECK(avg["HR@1"].get<double>() == 0.5);
  CHECK(avg["HR@5"].get<double>() == 0.5);
}
