// SPDX-License-Identifier: Apache-2.0
#include "semrec/usm.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <limits>
#include <set>

#include "semrec/assignment.hpp"
#include "semrec/errors.hpp"

namespace semrec {

namespace {

double log_sum_exp(const double* x, Eigen::Index n, Eigen::Index stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) m = std::max(m, x[i * stride]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += std::exp(x[i * stride] - m);
  return m + std::log(s);
}

}  // namespace

double TransportPlan::max_row_error() const {
  return plan.rows() == 0 ? 0.0 : (plan.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

double TransportPlan::max_col_error() const {
  if (plan.cols() == 0) return 0.0;
  const double target = static_cast<double>(plan.rows()) / static_cast<double>(plan.cols());
  return (plan.colwise().sum().array() - target).abs().maxCoeff();
}

TransportPlan sinkhorn(const RowMatrix& cost, const SinkhornOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw DomainError("sinkhorn epsilon must be positive");
  if (opts.iterations < 1) throw DomainError("sinkhorn needs at least one iteration");
  if (cost.rows() == 0 || cost.cols() == 0) throw DomainError("sinkhorn on an empty cost matrix");
  if (!cost.allFinite()) throw DomainError("sinkhorn cost must be finite");

  const Eigen::Index rows = cost.rows();
  const Eigen::Index cols = cost.cols();
  const double eps = opts.epsilon;
  const double log_col_mass = std::log(static_cast<double>(rows) / static_cast<double>(cols));
  const double col_mass = static_cast<double>(rows) / static_cast<double>(cols);

  Vector f = Vector::Zero(rows);
  Vector g = Vector::Zero(cols);
  RowMatrix scratch(rows, cols);
  TransportPlan out;
  out.plan.resize(rows, cols);

  for (int it = 0; it < opts.iterations; ++it) {
    for (Eigen::Index n = 0; n < rows; ++n)
      for (Eigen::Index k = 0; k < cols; ++k) scratch(n, k) = (f[n] - cost(n, k)) / eps;
    for (Eigen::Index k = 0; k < cols; ++k) g[k] = eps * (log_col_mass - log_sum_exp(scratch.data() + k, rows, cols));

    for (Eigen::Index n = 0; n < rows; ++n)
      for (Eigen::Index k = 0; k < cols; ++k) scratch(n, k) = (g[k] - cost(n, k)) / eps;
    for (Eigen::Index n = 0; n < rows; ++n) f[n] = -eps * log_sum_exp(scratch.data() + n * cols, cols, 1);

    if (!f.allFinite() || !g.allFinite())
      throw NumericalError(fmt::format(
          "sinkhorn potentials degenerated at iteration {} (epsilon {}); try a larger epsilon", it + 1, eps));

    for (Eigen::Index n = 0; n < rows; ++n)
      for (Eigen::Index k = 0; k < cols; ++k) out.plan(n, k) = std::exp(scratch(n, k) + f[n] / eps);
    out.iterations = it + 1;
    if (opts.tolerance > 0.0) {
      const double err = (out.plan.colwise().sum().array() - col_mass).abs().maxCoeff();
      if (err < opts.tolerance) break;
    }
  }

  for (Eigen::Index n = 0; n < rows; ++n)
    if (!(out.plan.row(n).sum() > 0.0))
      throw NumericalError(fmt::format("sinkhorn row {} underflowed (epsilon {}); try a larger epsilon", n, eps));
  return out;
}

std::vector<int> round_plan(const RowMatrix& plan) {
  std::vector<int> out(static_cast<std::size_t>(plan.rows()), 0);
  for (Eigen::Index n = 0; n < plan.rows(); ++n) {
    const double best = plan.row(n).maxCoeff();
    for (Eigen::Index k = 0; k < plan.cols(); ++k) {
      if (plan(n, k) >= best - kRoundingTieTolerance) {
        out[static_cast<std::size_t>(n)] = static_cast<int>(k);
        break;
      }
    }
  }
  return out;
}

RowMatrix squared_distances(const RowMatrix& residuals, const Eigen::Ref<const RowMatrix>& codes) {
  RowMatrix out(residuals.rows(), codes.rows());
  for (Eigen::Index n = 0; n < residuals.rows(); ++n)
    for (Eigen::Index k = 0; k < codes.rows(); ++k)
      out(n, k) = squared_distance(residuals.row(n).transpose(), codes.row(k).transpose());
  return out;
}

std::vector<int> assign_last_level(const RowMatrix& residuals, const Eigen::Ref<const RowMatrix>& last_codes,
                                   const SinkhornOptions& opts) {
  if (residuals.rows() == 0) throw DomainError("assign_last_level on an empty batch");
  RowMatrix cost = squared_distances(residuals, last_codes);
  const double mean = cost.mean();
  if (mean > std::numeric_limits<double>::min()) cost /= mean;
  return round_plan(sinkhorn(cost, opts).plan);
}

UsmQuantized quantize_with_usm(const RowMatrix& batch_z, const Codebook& cb, const SinkhornOptions& opts) {
  UsmQuantized out;
  const int last = cb.levels() - 1;
  RowMatrix partial;
  out.codes = quantize_batch(batch_z, cb, &out.residuals, &partial, last);
  const RowMatrix& r_last = out.residuals.back();
  const std::vector<int> last_codes = assign_last_level(r_last, cb.level(last), opts);
  RowMatrix next = r_last;
  for (Eigen::Index n = 0; n < batch_z.rows(); ++n) {
    const int c = last_codes[static_cast<std::size_t>(n)];
    out.codes(n, last) = c;
    next.row(n) -= cb.code(last, c).transpose();
  }
  out.residuals.push_back(std::move(next));
  // Sum of the selected code vectors in level order.
  out.quantized = RowMatrix::Zero(batch_z.rows(), batch_z.cols());
  for (Eigen::Index n = 0; n < batch_z.rows(); ++n)
    for (int h = 0; h < cb.levels(); ++h) out.quantized.row(n) += cb.code(h, out.codes(n, h)).transpose();
  return out;
}

CodeMatrix resolve_conflicts(const CodeMatrix& all_codes, const RowMatrix& residuals_last,
                             const Eigen::Ref<const RowMatrix>& last_codes, ConflictStats* stats) {
  const Eigen::Index n_items = all_codes.rows();
  const int levels = static_cast<int>(all_codes.cols());
  const int k_codes = static_cast<int>(last_codes.rows());
  if (residuals_last.rows() != n_items) throw DomainError("resolve_conflicts: residual rows do not match codes");
  if (levels < 1) throw DomainError("resolve_conflicts: empty index tuples");

  auto tuple_of = [&](Eigen::Index n) {
    return std::vector<int>(all_codes.row(n).data(), all_codes.row(n).data() + levels);
  };

  std::map<std::vector<int>, std::vector<Eigen::Index>> by_tuple;
  for (Eigen::Index n = 0; n < n_items; ++n) by_tuple[tuple_of(n)].push_back(n);

  ConflictStats local;
  std::set<std::vector<int>> conflicted_prefixes;
  for (const auto& [tuple, members] : by_tuple) {
    if (members.size() < 2) continue;
    ++local.groups;
    local.conflicting_items += static_cast<int>(members.size());
    ++local.size_histogram[static_cast<int>(members.size())];
    conflicted_prefixes.emplace(tuple.begin(), tuple.end() - 1);
  }

  CodeMatrix out = all_codes;
  if (local.groups == 0) {
    if (stats) *stats = local;
    return out;
  }

  std::map<std::vector<int>, std::vector<Eigen::Index>> by_prefix;
  for (Eigen::Index n = 0; n < n_items; ++n) {
    std::vector<int> t = tuple_of(n);
    t.pop_back();
    if (conflicted_prefixes.count(t)) by_prefix[std::move(t)].push_back(n);
  }

  for (const auto& [prefix, members] : by_prefix) {
    if (static_cast<int>(members.size()) > k_codes)
      throw UnresolvableConflictError(fmt::format(
          "prefix ({}) holds {} items but the last level has only {} codes", fmt::join(prefix, ","),
          members.size(), k_codes));

    std::vector<char> occupied(static_cast<std::size_t>(k_codes), 0);
    std::vector<Eigen::Index> movers;
    for (Eigen::Index n : members) {
      if (by_tuple[tuple_of(n)].size() > 1)
        movers.push_back(n);
      else
        occupied[static_cast<std::size_t>(all_codes(n, levels - 1))] = 1;
    }
    std::vector<int> free_codes;
    for (int k = 0; k < k_codes; ++k)
      if (!occupied[static_cast<std::size_t>(k)]) free_codes.push_back(k);

    RowMatrix cost(static_cast<Eigen::Index>(movers.size()), static_cast<Eigen::Index>(free_codes.size()));
    for (std::size_t i = 0; i < movers.size(); ++i)
      for (std::size_t j = 0; j < free_codes.size(); ++j)
        cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            squared_distance(residuals_last.row(movers[i]).transpose(), last_codes.row(free_codes[j]).transpose());

    const std::vector<int> choice = min_cost_assignment(cost);
    for (std::size_t i = 0; i < movers.size(); ++i) {
      const int code = free_codes[static_cast<std::size_t>(choice[i])];
      if (code != all_codes(movers[i], levels - 1)) ++local.reassigned_items;
      out(movers[i], levels - 1) = code;
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace semrec
