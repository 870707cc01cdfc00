// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "semrec/linalg.hpp"

namespace semrec {

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// solved with the shortest-augmenting-path Hungarian method in O(n^2 m).
/// Returns the column chosen for each row.
std::vector<int> min_cost_assignment(const RowMatrix& cost);

}  // namespace semrec
