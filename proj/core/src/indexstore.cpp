// SPDX-License-Identifier: Apache-2.0
#include "semrec/indexstore.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "semrec/errors.hpp"
#include "semrec/hashing.hpp"

namespace semrec {

namespace {
constexpr int kMaxLevels = 26;
constexpr int kIndexFormatVersion = 1;
}  // namespace

std::string token_form(const SemanticIndex& index) {
  if (index.levels() > kMaxLevels)
    throw UnsupportedError(fmt::format("token form supports at most {} levels, got {}", kMaxLevels, index.levels()));
  std::string out;
  for (int h = 0; h < index.levels(); ++h)
    out += fmt::format("<{}_{}>", static_cast<char>('a' + h), index.codes[static_cast<std::size_t>(h)]);
  return out;
}

SemanticIndex parse_token_form(std::string_view s) {
  SemanticIndex out;
  std::size_t pos = 0;
  auto expect = [&](char c) {
    if (pos >= s.size() || s[pos] != c)
      throw ParseError(fmt::format("expected '{}' in token form", c), 0, pos);
    ++pos;
  };
  if (s.empty()) throw ParseError("empty token form", 0, 0);
  while (pos < s.size()) {
    const int h = out.levels();
    if (h >= kMaxLevels) throw ParseError("too many levels in token form", 0, pos);
    expect('<');
    expect(static_cast<char>('a' + h));
    expect('_');
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) throw ParseError("expected a code number", 0, pos);
    if (s[start] == '0' && pos - start > 1) throw ParseError("leading zero in code number", 0, start);
    int code = 0;
    const auto res = std::from_chars(s.data() + start, s.data() + pos, code);
    if (res.ec != std::errc()) throw ParseError("code number out of range", 0, start);
    out.codes.push_back(code);
    expect('>');
  }
  return out;
}

IndexMapping::IndexMapping(int levels, int codes, std::vector<std::string> items, std::vector<SemanticIndex> indices)
    : levels_(levels), codes_(codes), items_(std::move(items)), indices_(std::move(indices)) {
  if (levels < 1 || codes < 1) throw RangeError("index mapping needs positive levels and codes");
  if (items_.size() != indices_.size()) throw SchemaError("item and index counts differ");
  lookup_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& idx = indices_[i];
    if (idx.levels() != levels_)
      throw RangeError(fmt::format("item '{}' has {} codes, expected {}", items_[i], idx.levels(), levels_));
    for (int c : idx.codes)
      if (c < 0 || c >= codes_)
        throw RangeError(fmt::format("item '{}' has code {} outside [0, {})", items_[i], c, codes_));
    if (!lookup_.emplace(items_[i], i).second)
      throw UniquenessError(fmt::format("duplicate item_id '{}' in index mapping", items_[i]));
  }
}

const SemanticIndex* IndexMapping::find(std::string_view item_id) const {
  auto it = lookup_.find(std::string(item_id));
  return it == lookup_.end() ? nullptr : &indices_[it->second];
}

const SemanticIndex& IndexMapping::at(std::string_view item_id) const {
  if (const auto* idx = find(item_id)) return *idx;
  throw GenerationError(fmt::format("item '{}' has no semantic index", item_id));
}

IndexTrie IndexTrie::build(const IndexMapping& mapping) {
  IndexTrie trie;
  trie.levels_ = mapping.levels();
  trie.nodes_.emplace_back();
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    std::size_t node = 0;
    for (int c : mapping.indices()[i].codes) {
      auto it = trie.nodes_[node].children.find(c);
      if (it == trie.nodes_[node].children.end()) {
        const std::size_t child = trie.nodes_.size();
        trie.nodes_[node].children.emplace(c, child);
        trie.nodes_.emplace_back();
        node = child;
      } else {
        node = it->second;
      }
    }
    if (!trie.nodes_[node].item.empty()) throw ConflictError(trie.nodes_[node].item, mapping.items()[i]);
    trie.nodes_[node].item = mapping.items()[i];
    ++trie.leaves_;
  }
  return trie;
}

const IndexTrie::Node* IndexTrie::walk(std::span<const int> prefix) const {
  if (nodes_.empty() || static_cast<int>(prefix.size()) > levels_) return nullptr;
  std::size_t node = 0;
  for (int c : prefix) {
    auto it = nodes_[node].children.find(c);
    if (it == nodes_[node].children.end()) return nullptr;
    node = it->second;
  }
  return &nodes_[node];
}

std::vector<int> IndexTrie::valid_next(std::span<const int> prefix) const {
  std::vector<int> out;
  if (static_cast<int>(prefix.size()) >= levels_) return out;
  if (const Node* n = walk(prefix))
    for (const auto& [code, child] : n->children) out.push_back(code);
  return out;
}

std::optional<std::string> IndexTrie::item_at(std::span<const int> codes) const {
  if (static_cast<int>(codes.size()) != levels_) return std::nullopt;
  const Node* n = walk(codes);
  if (!n || n->item.empty()) return std::nullopt;
  return n->item;
}

std::vector<std::pair<SemanticIndex, std::string>> IndexTrie::leaves() const {
  std::vector<std::pair<SemanticIndex, std::string>> out;
  if (nodes_.empty()) return out;
  std::vector<int> path;
  auto visit = [&](auto&& self, std::size_t node) -> void {
    if (static_cast<int>(path.size()) == levels_) {
      out.emplace_back(SemanticIndex{path}, nodes_[node].item);
      return;
    }
    for (const auto& [code, child] : nodes_[node].children) {
      path.push_back(code);
      self(self, child);
      path.pop_back();
    }
  };
  visit(visit, 0);
  return out;
}

std::filesystem::path index_meta_path(const std::filesystem::path& tsv_path) {
  return std::filesystem::path(tsv_path.string() + ".meta.json");
}

void save_index(const IndexMapping& mapping, const std::filesystem::path& path, const Json& meta) {
  std::ostringstream tsv;
  tsv << "item_id";
  for (int h = 1; h <= mapping.levels(); ++h) tsv << "\tc_" << h;
  tsv << '\n';
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    tsv << mapping.items()[i];
    for (int c : mapping.indices()[i].codes) tsv << '\t' << c;
    tsv << '\n';
  }
  const std::string body = tsv.str();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << body;
  }
  Json sidecar = {{"format", "semrec.index"},
                  {"version", kIndexFormatVersion},
                  {"levels", mapping.levels()},
                  {"codes", mapping.codes()},
                  {"items", mapping.size()},
                  {"sha256", sha256_hex(body)},
                  {"meta", meta}};
  std::ofstream out(index_meta_path(path));
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", index_meta_path(path).string()));
  out << sidecar.dump(2) << '\n';
}

IndexMapping load_index(const std::filesystem::path& path) {
  std::ifstream meta_in(index_meta_path(path));
  if (!meta_in) throw ConfigError(fmt::format("missing index metadata '{}'", index_meta_path(path).string()));
  Json meta;
  try {
    meta = Json::parse(meta_in);
  } catch (const Json::parse_error& e) {
    throw ParseError(fmt::format("index metadata: {}", e.what()), 0, e.byte);
  }
  if (meta.value("format", "") != "semrec.index") throw SchemaError("not a semrec index metadata file");
  if (meta.value("version", -1) != kIndexFormatVersion)
    throw SchemaError(fmt::format("index format version {} is not supported (expected {})", meta.value("version", -1),
                                  kIndexFormatVersion));
  const int levels = meta.value("levels", 0);
  const int codes = meta.value("codes", 0);
  const std::size_t expected_rows = meta.value("items", std::size_t{0});
  if (levels < 1 || codes < 1) throw SchemaError("index metadata lacks levels/codes");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open index '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string body = buf.str();

  std::istringstream lines(body);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(lines, line)) throw ParseError("index file is empty", 1);
  std::string header = "item_id";
  for (int h = 1; h <= levels; ++h) header += "\tc_" + std::to_string(h);
  if (line != header) throw ParseError("unexpected index header", 1);

  std::vector<std::string> items;
  std::vector<SemanticIndex> indices;
  std::size_t consumed = line.size() + 1;
  while (std::getline(lines, line)) {
    ++line_no;
    const bool terminated = consumed + line.size() < body.size();
    consumed += line.size() + 1;
    if (!terminated) throw ParseError("last index row is not newline-terminated (truncated file?)", line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (static_cast<int>(fields.size()) != levels + 1)
      throw ParseError(fmt::format("expected {} fields, found {}", levels + 1, fields.size()), line_no);
    SemanticIndex idx;
    for (int h = 0; h < levels; ++h) {
      const auto f = fields[static_cast<std::size_t>(h) + 1];
      int c = 0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), c);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ParseError(fmt::format("code '{}' is not an integer", f), line_no);
      if (c < 0 || c >= codes)
        throw RangeError(fmt::format("line {}: code {} outside [0, {})", line_no, c, codes));
      idx.codes.push_back(c);
    }
    items.emplace_back(fields[0]);
    indices.push_back(std::move(idx));
  }
  if (items.size() != expected_rows)
    throw ParseError(fmt::format("index has {} rows, metadata says {} (truncated file?)", items.size(), expected_rows));
  if (meta.value("sha256", "") != sha256_hex(body)) throw ParseError("index checksum mismatch");
  return IndexMapping(levels, codes, std::move(items), std::move(indices));
}

}  // namespace semrec
