// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <vector>

#include "semrec/codebook.hpp"
#include "semrec/linalg.hpp"

namespace semrec {

/// Soft assignment of |B| rows to K columns. Rows sum to 1; columns sum to |B|/K.
struct TransportPlan {
  RowMatrix plan;
  int iterations = 0;

  double max_row_error() const;
  double max_col_error() const;
};

struct SinkhornOptions {
  double epsilon = 0.05;
  int iterations = 100;
  /// Early stop once every column sum is within this of |B|/K (0 disables).
  double tolerance = 1e-9;
};

/// Entropic optimal transport with uniform row mass 1 and column mass |B|/K,
/// solved by log-domain Sinkhorn-Knopp on the raw cost. Every iteration ends
/// with the row update, so rows are exact to rounding. Throws NumericalError
/// when the potentials degenerate.
TransportPlan sinkhorn(const RowMatrix& cost, const SinkhornOptions& opts = {});

/// Row-wise argmax of a plan. Entries within `kRoundingTieTolerance` of the
/// row maximum count as ties, resolved toward the lowest column.
std::vector<int> round_plan(const RowMatrix& plan);
inline constexpr double kRoundingTieTolerance = 1e-6;

/// Pairwise squared distances between residual rows and code rows.
RowMatrix squared_distances(const RowMatrix& residuals, const Eigen::Ref<const RowMatrix>& codes);

/// Uniform last-level assignment: squared-distance cost normalized by its
/// batch mean, transport plan, then greedy rounding.
std::vector<int> assign_last_level(const RowMatrix& residuals, const Eigen::Ref<const RowMatrix>& last_codes,
                                   const SinkhornOptions& opts = {});

struct UsmQuantized {
  CodeMatrix codes;                 // |B| x H
  RowMatrix quantized;              // |B| x d
  std::vector<RowMatrix> residuals; // r_1 .. r_{H+1}
};

/// Greedy nearest-code assignment on levels 1..H-1 and uniform mapping on level H.
UsmQuantized quantize_with_usm(const RowMatrix& batch_z, const Codebook& cb, const SinkhornOptions& opts = {});

struct ConflictStats {
  int groups = 0;                  // distinct full indices shared by >1 item
  int conflicting_items = 0;       // items inside those groups
  int reassigned_items = 0;        // items whose last code changed
  std::map<int, int> size_histogram;  // group size -> number of groups
};

/// Second stage of index construction: every set of items sharing a full
/// index gets distinct last-level codes via exact minimum-cost assignment.
/// Codes held by non-conflicting items with the same prefix stay put and are
/// not available to movers. Levels 1..H-1 are never changed. Throws
/// UnresolvableConflictError when a prefix holds more items than codes.
CodeMatrix resolve_conflicts(const CodeMatrix& all_codes, const RowMatrix& residuals_last,
                             const Eigen::Ref<const RowMatrix>& last_codes, ConflictStats* stats = nullptr);

}  // namespace semrec
