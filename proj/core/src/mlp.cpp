// SPDX-License-Identifier: Apache-2.0
#include "semrec/mlp.hpp"

#include <fmt/format.h>

#include <cmath>

#include "semrec/errors.hpp"

namespace semrec {

MlpNetwork::MlpNetwork(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw DomainError("an MLP needs at least an input and an output size");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw DomainError("MLP layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(total);
}

MlpNetwork MlpNetwork::random(std::vector<int> layer_sizes, std::mt19937_64& rng) {
  MlpNetwork net(std::move(layer_sizes));
  for (int l = 0; l < net.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / net.sizes_[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = net.weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  return net;
}

MlpNetwork::ConstWeightMap MlpNetwork::weight(int layer) const {
  return ConstWeightMap(params_.data() + offsets_[layer], sizes_[layer], sizes_[layer + 1]);
}

MlpNetwork::WeightMap MlpNetwork::weight(Vector& buffer, int layer) const {
  return WeightMap(buffer.data() + offsets_[layer], sizes_[layer], sizes_[layer + 1]);
}

Eigen::Map<Vector> MlpNetwork::bias(Vector& buffer, int layer) const {
  const Eigen::Index off = offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1];
  return Eigen::Map<Vector>(buffer.data() + off, sizes_[layer + 1]);
}

RowMatrix MlpNetwork::forward(const RowMatrix& x, Trace* trace) const {
  if (x.cols() != input_dim())
    throw SchemaError(fmt::format("MLP input has dimension {}, expected {}", x.cols(), input_dim()));
  if (trace) {
    trace->inputs.clear();
    trace->pre.clear();
  }
  RowMatrix h = x;
  for (int l = 0; l < num_layers(); ++l) {
    const Eigen::Index off = offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1];
    Eigen::Map<const Vector> b(params_.data() + off, sizes_[l + 1]);
    RowMatrix pre = h * weight(l);
    pre.rowwise() += b.transpose();
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(pre);
    }
    h = (l + 1 < num_layers()) ? RowMatrix(pre.cwiseMax(0.0)) : std::move(pre);
  }
  return h;
}

Vector MlpNetwork::forward(const Vector& x) const {
  RowMatrix row = x.transpose();
  return forward(row).row(0).transpose();
}

RowMatrix MlpNetwork::backward(const Trace& trace, const RowMatrix& d_out, Vector& grad) const {
  if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
  RowMatrix d = d_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    if (l + 1 < num_layers()) d = d.cwiseProduct((trace.pre[l].array() > 0.0).cast<double>().matrix());
    weight(grad, l).noalias() += trace.inputs[l].transpose() * d;
    bias(grad, l) += d.colwise().sum().transpose();
    d = (d * weight(l).transpose()).eval();
  }
  return d;
}

}  // namespace semrec
