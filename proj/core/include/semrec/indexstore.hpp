// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semrec/json.hpp"

namespace semrec {

/// Ordered H-tuple of codewords identifying one item.
struct SemanticIndex {
  std::vector<int> codes;

  int levels() const { return static_cast<int>(codes.size()); }
  auto operator<=>(const SemanticIndex&) const = default;
};

/// "<a_124><b_192><c_41><d_17>" style surface form. Throws UnsupportedError when H > 26.
std::string token_form(const SemanticIndex& index);

/// Inverse of token_form. Throws ParseError carrying the byte offset.
SemanticIndex parse_token_form(std::string_view s);

/// item_id -> index, with the codebook shape the indices were drawn from.
class IndexMapping {
 public:
  IndexMapping() = default;
  /// Throws RangeError for codes outside [0, codes) or the wrong length and
  /// UniquenessError for a repeated item_id.
  IndexMapping(int levels, int codes, std::vector<std::string> items, std::vector<SemanticIndex> indices);

  int levels() const { return levels_; }
  int codes() const { return codes_; }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<SemanticIndex>& indices() const { return indices_; }

  const SemanticIndex* find(std::string_view item_id) const;
  const SemanticIndex& at(std::string_view item_id) const;  // throws GenerationError when absent

  bool operator==(const IndexMapping& other) const {
    return levels_ == other.levels_ && codes_ == other.codes_ && items_ == other.items_ &&
           indices_ == other.indices_;
  }

 private:
  int levels_ = 0;
  int codes_ = 0;
  std::vector<std::string> items_;
  std::vector<SemanticIndex> indices_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Prefix tree over all indices; every leaf sits at depth H and holds one item.
class IndexTrie {
 public:
  /// Throws ConflictError naming both items when two share an index.
  static IndexTrie build(const IndexMapping& mapping);

  int levels() const { return levels_; }
  std::size_t size() const { return leaves_; }

  /// Codes that extend `prefix` toward at least one leaf; empty when the
  /// prefix is absent or already complete.
  std::vector<int> valid_next(std::span<const int> prefix) const;

  /// Item at a complete index, if any.
  std::optional<std::string> item_at(std::span<const int> codes) const;
  bool contains(const SemanticIndex& index) const { return item_at(index.codes).has_value(); }

  /// Depth-first enumeration of (index, item) pairs in code order.
  std::vector<std::pair<SemanticIndex, std::string>> leaves() const;

 private:
  struct Node {
    std::map<int, std::size_t> children;
    std::string item;  // leaves only
  };
  const Node* walk(std::span<const int> prefix) const;

  int levels_ = 0;
  std::size_t leaves_ = 0;
  std::vector<Node> nodes_;
};

/// Writes `path` as TSV (header `item_id, c_1..c_H`) plus `path.meta.json`
/// holding H, K, row count, format version and the TSV's SHA-256.
void save_index(const IndexMapping& mapping, const std::filesystem::path& path, const Json& meta = Json::object());

/// Throws SchemaError on a version mismatch, ParseError on truncated or
/// malformed content, RangeError on out-of-range codes.
IndexMapping load_index(const std::filesystem::path& path);

std::filesystem::path index_meta_path(const std::filesystem::path& tsv_path);

}  // namespace semrec
