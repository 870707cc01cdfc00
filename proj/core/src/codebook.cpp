// SPDX-License-Identifier: Apache-2.0
#include "semrec/codebook.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "semrec/errors.hpp"

namespace semrec {

Codebook::Codebook(int levels, int codes, int dim) : levels_(levels), codes_(codes), dim_(dim) {
  if (levels < 1) throw DomainError("codebook needs at least one level");
  if (codes < 2) throw DomainError("codebook needs at least two codes per level");
  if (dim < 1) throw DomainError("codebook dimension must be positive");
  data_ = Vector::Zero(static_cast<Eigen::Index>(levels) * codes * dim);
}

Eigen::Map<RowMatrix> Codebook::level(int h) { return level(data_, h); }

Eigen::Map<const RowMatrix> Codebook::level(int h) const {
  return Eigen::Map<const RowMatrix>(data_.data() + static_cast<Eigen::Index>(h) * codes_ * dim_, codes_, dim_);
}

Eigen::Map<RowMatrix> Codebook::level(Vector& buffer, int h) const {
  return Eigen::Map<RowMatrix>(buffer.data() + static_cast<Eigen::Index>(h) * codes_ * dim_, codes_, dim_);
}

Eigen::Map<Vector> Codebook::code(int h, int k) {
  return Eigen::Map<Vector>(data_.data() + (static_cast<Eigen::Index>(h) * codes_ + k) * dim_, dim_);
}

Eigen::Map<const Vector> Codebook::code(int h, int k) const {
  return Eigen::Map<const Vector>(data_.data() + (static_cast<Eigen::Index>(h) * codes_ + k) * dim_, dim_);
}

double squared_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

int nearest_code(const Codebook& cb, int h, const Eigen::Ref<const Vector>& r) {
  const double* base = cb.data().data() + static_cast<Eigen::Index>(h) * cb.codes() * cb.dim();
  const int d = cb.dim();
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.codes(); ++k) {
    const double* v = base + static_cast<Eigen::Index>(k) * d;
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double t = r[i] - v[i];
      s += t * t;
    }
    if (s < best_dist) {
      best_dist = s;
      best = k;
    }
  }
  return best;
}

QuantizeResult quantize(const Vector& z, const Codebook& cb) {
  if (z.size() != cb.dim()) throw SchemaError("quantize: vector dimension does not match codebook");
  QuantizeResult out;
  out.codes.reserve(static_cast<std::size_t>(cb.levels()));
  out.residuals.reserve(static_cast<std::size_t>(cb.levels()) + 1);
  out.residuals.push_back(z);
  out.quantized = Vector::Zero(z.size());
  for (int h = 0; h < cb.levels(); ++h) {
    const Vector& r = out.residuals.back();
    const int c = nearest_code(cb, h, r);
    out.codes.push_back(c);
    out.quantized += cb.code(h, c);
    out.residuals.push_back(r - cb.code(h, c));
  }
  return out;
}

CodeMatrix quantize_batch(const RowMatrix& z, const Codebook& cb, std::vector<RowMatrix>* residuals,
                          RowMatrix* quantized, int levels) {
  if (z.cols() != cb.dim()) throw SchemaError("quantize: vector dimension does not match codebook");
  if (levels < 0) levels = cb.levels();
  CodeMatrix codes(z.rows(), cb.levels());
  codes.setZero();
  RowMatrix r = z;
  if (residuals) {
    residuals->clear();
    residuals->push_back(r);
  }
  if (quantized) *quantized = RowMatrix::Zero(z.rows(), z.cols());
  for (int h = 0; h < levels; ++h) {
    for (Eigen::Index n = 0; n < z.rows(); ++n) {
      const int c = nearest_code(cb, h, r.row(n).transpose());
      codes(n, h) = c;
      r.row(n) -= cb.code(h, c).transpose();
      if (quantized) quantized->row(n) += cb.code(h, c).transpose();
    }
    if (residuals) residuals->push_back(r);
  }
  return codes;
}

RowMatrix kmeans(const RowMatrix& points, int k, int iterations, std::mt19937_64& rng, std::vector<int>* labels) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (n == 0) throw DomainError("kmeans on an empty point set");
  RowMatrix centers(k, d);
  if (n >= k) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int j = 0; j < k; ++j) centers.row(j) = points.row(order[static_cast<std::size_t>(j)]);
  } else {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int j = 0; j < k; ++j) centers.row(j) = points.row(pick(rng));
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double dist = squared_distance(points.row(i).transpose(), centers.row(j).transpose());
        if (dist < best_dist) {
          best_dist = dist;
          best = j;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    RowMatrix sums = RowMatrix::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0)
        centers.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
      else
        centers.row(j) = points.row(pick(rng));  // empty cluster: reseed
    }
  }
  if (labels) *labels = std::move(assign);
  return centers;
}

}  // namespace semrec
