// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semrec/linalg.hpp"

namespace semrec {

/// Item embeddings in canonical item order. Row i belongs to items[i].
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws UniquenessError on duplicate ids and SchemaError when the row
  /// count does not match or a value is non-finite.
  EmbeddingMatrix(std::vector<std::string> items, RowMatrix data);

  const std::vector<std::string>& items() const { return items_; }
  const RowMatrix& data() const { return data_; }
  std::size_t size() const { return items_.size(); }
  Eigen::Index dim() const { return data_.cols(); }

  /// Row index of `item_id`, or -1.
  std::ptrdiff_t find(std::string_view item_id) const;

  bool operator==(const EmbeddingMatrix& other) const;

 private:
  std::vector<std::string> items_;
  RowMatrix data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads JSON Lines `{"item_id": str, "vector": [numbers]}`; rows stay in file order.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

/// Componentwise mean of a non-empty list of equal-length vectors.
Vector mean_pool(std::span<const Vector> token_vectors);

/// Deterministic text embedding from seeded character 3-gram hashes, centered
/// to zero mean. The empty string maps to the zero vector.
Vector hash_embed(std::string_view text, int d_emb, std::uint64_t seed);

/// Per-dimension zero mean / unit variance over the corpus. Constant columns
/// are only centered.
EmbeddingMatrix standardize(const EmbeddingMatrix& matrix);

}  // namespace semrec
