// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "semrec/json.hpp"

namespace semrec {

/// One user's ranked list (best first) and the held-out item.
struct RankedPrediction {
  std::string user_id;
  std::vector<std::string> ranked;
  std::string truth;
};

/// One line of a prediction dump.
struct PredictionRow {
  std::string user_id;
  int rank = 0;  // 1-based
  std::string item_id;
  double logprob = 0.0;

  bool operator==(const PredictionRow&) const = default;
};

/// 1-based position of the truth in the ranked list; 0 when absent.
int truth_rank(const RankedPrediction& p);

/// Fraction of users whose truth is in the top k. Lists shorter than k count
/// missing ranks as misses. Throws DomainError for k < 1 or an empty set and
/// UniquenessError when a list repeats an item.
double hr_at_k(std::span<const RankedPrediction> preds, int k);

/// Mean of 1/log2(rank + 1) over users with rank <= k (one relevant item, so
/// the ideal DCG is 1).
double ndcg_at_k(std::span<const RankedPrediction> preds, int k);

/// TSV with header `user_id, rank, item_id, logprob`.
void save_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path);
std::vector<PredictionRow> load_predictions(const std::filesystem::path& path);

/// Groups rows by user (ordered by rank) and attaches each user's truth.
/// Users with a truth but no rows get an empty list; rows for users without
/// a truth throw DomainError.
std::vector<RankedPrediction> group_predictions(const std::vector<PredictionRow>& rows,
                                                const std::map<std::string, std::string>& truth);

/// {"users": n, "HR@k": .., "NDCG@k": .. for each k}.
Json metrics_report(std::span<const RankedPrediction> preds, const std::vector<int>& ks);

/// Key-wise mean of several reports, e.g. one per instruction template.
Json average_reports(const std::vector<Json>& reports);

}  // namespace semrec
