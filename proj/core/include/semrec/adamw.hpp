// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "semrec/linalg.hpp"

namespace semrec {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay for one flat parameter vector.
class AdamW {
 public:
  AdamW() = default;
  AdamW(Eigen::Index size, AdamWConfig cfg) : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& grad, double lr) {
    ++t_;
    params -= (lr * cfg_.weight_decay) * params;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
  }

  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

}  // namespace semrec
