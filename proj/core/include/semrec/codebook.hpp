// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "semrec/linalg.hpp"

namespace semrec {

using CodeMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// H levels of K code vectors, each of dimension d. Stored flat as [h][k][d].
class Codebook {
 public:
  Codebook() = default;
  /// Zero-initialized. Requires levels >= 1 and codes >= 2.
  Codebook(int levels, int codes, int dim);

  int levels() const { return levels_; }
  int codes() const { return codes_; }
  int dim() const { return dim_; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  /// K x d view of one level.
  Eigen::Map<RowMatrix> level(int h);
  Eigen::Map<const RowMatrix> level(int h) const;
  Eigen::Map<Vector> code(int h, int k);
  Eigen::Map<const Vector> code(int h, int k) const;

  /// Same views over any buffer laid out like this codebook.
  Eigen::Map<RowMatrix> level(Vector& buffer, int h) const;

  bool operator==(const Codebook& other) const {
    return levels_ == other.levels_ && codes_ == other.codes_ && dim_ == other.dim_ && data_ == other.data_;
  }

 private:
  int levels_ = 0;
  int codes_ = 0;
  int dim_ = 0;
  Vector data_;
};

struct QuantizeResult {
  std::vector<int> codes;          // one per level
  Vector quantized;                // sum of the selected code vectors
  std::vector<Vector> residuals;   // r_1 = z, ..., r_{H+1}
};

/// Squared Euclidean distance accumulated in index order.
double squared_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

/// Index of the nearest code at level h; ties go to the lowest index.
int nearest_code(const Codebook& cb, int h, const Eigen::Ref<const Vector>& r);

/// Greedy residual quantization of one vector through all levels.
QuantizeResult quantize(const Vector& z, const Codebook& cb);

/// Batched greedy quantization. Returns codes (rows x H); fills the level-wise
/// residual matrices r_1..r_{H+1} and the quantized sum when requested.
CodeMatrix quantize_batch(const RowMatrix& z, const Codebook& cb, std::vector<RowMatrix>* residuals = nullptr,
                          RowMatrix* quantized = nullptr, int levels = -1);

/// Seeded Lloyd iterations. Initial centers are a random sample of the rows
/// (with replacement when there are fewer rows than centers). Returns K x d.
RowMatrix kmeans(const RowMatrix& points, int k, int iterations, std::mt19937_64& rng,
                 std::vector<int>* labels = nullptr);

}  // namespace semrec
