// SPDX-License-Identifier: Apache-2.0
#include "semrec/embed.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

#include "semrec/errors.hpp"
#include "semrec/hashing.hpp"
#include "semrec/json.hpp"

namespace semrec {

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> items, RowMatrix data)
    : items_(std::move(items)), data_(std::move(data)) {
  if (static_cast<Eigen::Index>(items_.size()) != data_.rows())
    throw SchemaError(fmt::format("{} item ids for {} embedding rows", items_.size(), data_.rows()));
  if (!data_.allFinite()) throw SchemaError("embedding matrix contains non-finite values");
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i], i).second)
      throw UniquenessError(fmt::format("duplicate item_id '{}'", items_[i]));
  }
}

std::ptrdiff_t EmbeddingMatrix::find(std::string_view item_id) const {
  auto it = index_.find(std::string(item_id));
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  return items_ == other.items_ && data_.rows() == other.data_.rows() &&
         data_.cols() == other.data_.cols() && data_ == other.data_;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open embeddings file '{}'", path.string()));

  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(e.what(), line_no, e.byte);
    }
    if (!rec.is_object() || !rec.contains("item_id") || !rec["item_id"].is_string() ||
        !rec.contains("vector") || !rec["vector"].is_array())
      throw SchemaError("expected {\"item_id\": string, \"vector\": [numbers]}", line_no);
    const auto& vec = rec["vector"];
    if (rows.empty()) {
      dim = vec.size();
      if (dim == 0) throw SchemaError("empty vector", line_no);
    } else if (vec.size() != dim) {
      throw SchemaError(fmt::format("vector has {} components, expected {}", vec.size(), dim), line_no);
    }
    std::vector<double> row;
    row.reserve(dim);
    for (const auto& v : vec) {
      if (!v.is_number()) throw SchemaError("vector component is not a number", line_no);
      double x = v.get<double>();
      if (!std::isfinite(x)) throw SchemaError("non-finite vector component", line_no);
      row.push_back(x);
    }
    ids.push_back(rec["item_id"].get<std::string>());
    rows.push_back(std::move(row));
  }

  RowMatrix data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return EmbeddingMatrix(std::move(ids), std::move(data));
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    Json rec;
    rec["item_id"] = matrix.items()[i];
    auto row = matrix.data().row(static_cast<Eigen::Index>(i));
    rec["vector"] = std::vector<double>(row.begin(), row.end());
    out << rec.dump() << '\n';
  }
}

Vector mean_pool(std::span<const Vector> token_vectors) {
  if (token_vectors.empty()) throw DomainError("mean_pool of an empty list");
  Vector acc = Vector::Zero(token_vectors.front().size());
  for (const auto& v : token_vectors) {
    if (v.size() != acc.size()) throw DomainError("mean_pool over vectors of different dimension");
    acc += v;
  }
  return acc / static_cast<double>(token_vectors.size());
}

Vector hash_embed(std::string_view text, int d_emb, std::uint64_t seed) {
  if (d_emb < 1) throw DomainError("hash_embed dimension must be positive");
  Vector v = Vector::Zero(d_emb);
  if (text.empty()) return v;

  constexpr std::size_t kGram = 3;
  auto add_gram = [&](std::string_view gram) {
    const std::uint64_t h = fnv1a64(gram, seed);
    for (int j = 0; j < d_emb; ++j)
      v[j] += 2.0 * unit_double(mix64(h ^ mix64(static_cast<std::uint64_t>(j)))) - 1.0;
  };
  if (text.size() < kGram) {
    add_gram(text);
  } else {
    for (std::size_t i = 0; i + kGram <= text.size(); ++i) add_gram(text.substr(i, kGram));
  }
  v.array() -= v.mean();
  return v;
}

EmbeddingMatrix standardize(const EmbeddingMatrix& matrix) {
  RowMatrix data = matrix.data();
  if (data.rows() == 0) return matrix;
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::RowVectorXd sd = (data.array().square().colwise().sum() / static_cast<double>(data.rows())).sqrt();
  for (Eigen::Index j = 0; j < data.cols(); ++j)
    if (sd[j] > 0.0) data.col(j) /= sd[j];
  return EmbeddingMatrix(matrix.items(), std::move(data));
}

}  // namespace semrec
