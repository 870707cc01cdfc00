// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "semrec/linalg.hpp"

namespace semrec {

/// Fully connected network: ReLU on hidden layers, identity on the output.
/// Parameters live in one flat vector laid out as W_0, b_0, W_1, b_1, ...
/// where W_l is a row-major (in x out) matrix, so a batch maps as Y = X W + b.
class MlpNetwork {
 public:
  using WeightMap = Eigen::Map<RowMatrix>;
  using ConstWeightMap = Eigen::Map<const RowMatrix>;

  MlpNetwork() = default;
  /// Zero-initialized network.
  explicit MlpNetwork(std::vector<int> layer_sizes);

  /// He-uniform weights, zero biases.
  static MlpNetwork random(std::vector<int> layer_sizes, std::mt19937_64& rng);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  WeightMap weight(int layer) { return weight(params_, layer); }
  ConstWeightMap weight(int layer) const;
  Eigen::Map<Vector> bias(int layer) { return bias(params_, layer); }

  /// Views into any buffer with this network's layout (e.g. a gradient).
  WeightMap weight(Vector& buffer, int layer) const;
  Eigen::Map<Vector> bias(Vector& buffer, int layer) const;

  /// Activations saved by forward() for backward().
  struct Trace {
    std::vector<RowMatrix> inputs;  // input to each layer (post-activation of the previous)
    std::vector<RowMatrix> pre;     // pre-activation output of each layer
  };

  /// Rows of `x` are samples. Throws SchemaError on a dimension mismatch.
  RowMatrix forward(const RowMatrix& x, Trace* trace = nullptr) const;
  Vector forward(const Vector& x) const;

  /// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
  RowMatrix backward(const Trace& trace, const RowMatrix& d_out, Vector& grad) const;

  bool operator==(const MlpNetwork& other) const {
    return sizes_ == other.sizes_ && params_.size() == other.params_.size() && params_ == other.params_;
  }

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;  // start of W_l; b_l follows
  Vector params_;
};

}  // namespace semrec
