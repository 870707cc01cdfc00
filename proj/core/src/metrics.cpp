// SPDX-License-Identifier: Apache-2.0
#include "semrec/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "semrec/errors.hpp"

namespace semrec {

namespace {

void check_set(std::span<const RankedPrediction> preds, int k) {
  if (k < 1) throw DomainError(fmt::format("cutoff k must be >= 1, got {}", k));
  if (preds.empty()) throw DomainError("no predictions to score");
  for (const auto& p : preds) {
    std::unordered_set<std::string_view> seen;
    for (const auto& item : p.ranked)
      if (!seen.insert(item).second)
        throw UniquenessError(fmt::format("user '{}' ranks item '{}' twice", p.user_id, item));
  }
}

}  // namespace

int truth_rank(const RankedPrediction& p) {
  const auto it = std::find(p.ranked.begin(), p.ranked.end(), p.truth);
  return it == p.ranked.end() ? 0 : static_cast<int>(it - p.ranked.begin()) + 1;
}

double hr_at_k(std::span<const RankedPrediction> preds, int k) {
  check_set(preds, k);
  std::size_t hits = 0;
  for (const auto& p : preds) {
    const int r = truth_rank(p);
    if (r >= 1 && r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double ndcg_at_k(std::span<const RankedPrediction> preds, int k) {
  check_set(preds, k);
  double total = 0.0;
  for (const auto& p : preds) {
    const int r = truth_rank(p);
    if (r >= 1 && r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return total / static_cast<double>(preds.size());
}

void save_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << "user_id\trank\titem_id\tlogprob\n";
  for (const auto& r : rows) out << fmt::format("{}\t{}\t{}\t{}\n", r.user_id, r.rank, r.item_id, r.logprob);
}

std::vector<PredictionRow> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "user_id\trank\titem_id\tlogprob")
    throw ParseError(fmt::format("'{}': missing prediction header", path.string()), 1);
  std::vector<PredictionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) f.push_back(cell);
    if (f.size() != 4) throw ParseError(fmt::format("expected 4 fields, got {}", f.size()), line_no);
    PredictionRow r;
    r.user_id = f[0];
    r.item_id = f[2];
    try {
      std::size_t used = 0;
      r.rank = std::stoi(f[1], &used);
      if (used != f[1].size() || r.rank < 1) throw std::invalid_argument("rank");
      r.logprob = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("logprob");
    } catch (const std::exception&) {
      throw ParseError(fmt::format("bad rank or logprob in '{}'", line), line_no);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RankedPrediction> group_predictions(const std::vector<PredictionRow>& rows,
                                                const std::map<std::string, std::string>& truth) {
  std::map<std::string, std::vector<const PredictionRow*>> by_user;
  for (const auto& r : rows) {
    if (!truth.count(r.user_id)) throw DomainError(fmt::format("prediction for unknown user '{}'", r.user_id));
    by_user[r.user_id].push_back(&r);
  }
  std::vector<RankedPrediction> out;
  out.reserve(truth.size());
  for (const auto& [user, item] : truth) {
    RankedPrediction p{user, {}, item};
    if (auto it = by_user.find(user); it != by_user.end()) {
      auto list = it->second;
      std::stable_sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
      for (const auto* r : list) p.ranked.push_back(r->item_id);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Json metrics_report(std::span<const RankedPrediction> preds, const std::vector<int>& ks) {
  Json j;
  j["users"] = preds.size();
  for (int k : ks) {
    j[fmt::format("HR@{}", k)] = hr_at_k(preds, k);
    j[fmt::format("NDCG@{}", k)] = ndcg_at_k(preds, k);
  }
  return j;
}

Json average_reports(const std::vector<Json>& reports) {
  if (reports.empty()) throw DomainError("no reports to average");
  Json out = Json::object();
  for (const auto& [key, value] : reports.front().items()) {
    if (!value.is_number()) continue;
    double sum = 0.0;
    for (const auto& r : reports) {
      if (!r.contains(key) || !r[key].is_number()) throw SchemaError(fmt::format("report lacks '{}'", key));
      sum += r[key].get<double>();
    }
    out[key] = sum / static_cast<double>(reports.size());
  }
  return out;
}

}  // namespace semrec
