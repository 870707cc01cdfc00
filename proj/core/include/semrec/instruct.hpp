// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semrec/corpus.hpp"
#include "semrec/indexstore.hpp"
#include "semrec/json.hpp"

namespace semrec {

enum class TaskFamily { kSeq, kMutI2L, kMutL2I, kAsyTitle, kAsyDesc, kAsyTitleSeq, kIteQuery, kItePersonal, kPer };

std::string_view task_name(TaskFamily task);
TaskFamily task_from_name(std::string_view name);
const std::vector<TaskFamily>& all_tasks();

/// Instruction templates keyed by variant. A variant is a task family name,
/// or a family name plus suffix for alternate field sets (e.g. "MUT_L2I_TITLE"
/// when an item has no description). Placeholders: {HISTORY} {TITLE} {DESC}
/// {INDEX} {QUERY}.
class TemplateBank {
 public:
  /// Throws SchemaError when a template's placeholders differ from the set
  /// its variant requires or a known variant has fewer than one template.
  explicit TemplateBank(std::map<std::string, std::vector<std::string>> templates);

  /// Three templates per variant, worded after common instruction formats.
  static TemplateBank builtin();
  static TemplateBank from_json(const Json& j);

  const std::vector<std::string>& templates(const std::string& variant) const;
  const std::map<std::string, std::vector<std::string>>& all() const { return templates_; }

  /// Placeholders each variant requires.
  static const std::map<std::string, std::vector<std::string>>& required_placeholders();

 private:
  std::map<std::string, std::vector<std::string>> templates_;
};

/// Substitutes every {NAME} in `tmpl` from `fields`; throws GenerationError on a missing field.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields);

/// One underlying instruction datum before a template is chosen.
struct InstructionDatum {
  TaskFamily task = TaskFamily::kSeq;
  std::string variant;
  std::map<std::string, std::string> fields;
  std::string response;
  std::optional<std::string> user_id;
  std::optional<std::string> item_id;
  std::optional<std::string> intention_source;   // "sidecar" | "surrogate"
  std::optional<std::string> preference_source;  // "sidecar" | "surrogate"
};

struct InstructionExample {
  TaskFamily task = TaskFamily::kSeq;
  std::string instruction;
  std::string response;
  std::optional<std::string> user_id;
  std::optional<std::string> item_id;
  std::optional<std::string> intention_source;
  std::optional<std::string> preference_source;

  Json to_json() const;
};

enum class SplitKind { kTrain, kValid, kTest };
std::string_view split_name(SplitKind split);

/// (history -> target) pairs for one split. Train yields every prefix of each
/// user's training items; valid and test yield one pair per user.
struct SequenceExample {
  std::string user_id;
  std::vector<std::string> history;
  std::string target;
};
std::vector<SequenceExample> make_examples(const LooSplit& split, SplitKind kind);

struct ItemTextIndex {
  explicit ItemTextIndex(const std::vector<ItemText>& items);
  const ItemText* find(std::string_view item_id) const;
  const ItemText& at(std::string_view item_id) const;  // throws GenerationError

  std::vector<ItemText> items;
  std::unordered_map<std::string, std::size_t> lookup;
};

/// Comma-separated token forms, oldest first.
std::string render_history(const std::vector<std::string>& history, const IndexMapping& mapping);

std::vector<InstructionDatum> gen_seq(const std::vector<SequenceExample>& examples, const IndexMapping& mapping);
std::vector<InstructionDatum> gen_mutual(const std::vector<ItemText>& items, const IndexMapping& mapping);
std::vector<InstructionDatum> gen_asymmetric(const std::vector<SequenceExample>& examples,
                                             const IndexMapping& mapping, const ItemTextIndex& texts);
/// Intentions come from `sidecar` (item_id -> text) or fall back to the first
/// 200 characters of the target's description; targets with neither are skipped.
std::vector<InstructionDatum> gen_intention(const std::vector<SequenceExample>& examples,
                                            const IndexMapping& mapping, const ItemTextIndex& texts,
                                            const std::unordered_map<std::string, std::string>& sidecar);
/// One datum per user, from the user's longest history in `examples`. The
/// fallback preference joins the titles of up to three most recent history
/// items sharing the user's most frequent first-level code.
std::vector<InstructionDatum> gen_preference(const std::vector<SequenceExample>& examples,
                                             const IndexMapping& mapping, const ItemTextIndex& texts,
                                             const std::unordered_map<std::string, std::string>& sidecar);

/// Canonical order: (task, user_id, item_id), stable.
void canonical_sort(std::vector<InstructionDatum>& data);

/// One template per datum, drawn from a stream seeded by (seed, epoch).
std::vector<InstructionExample> epoch_sample(const std::vector<InstructionDatum>& data, const TemplateBank& bank,
                                             int epoch, std::uint64_t seed);

/// Writes one JSON Lines file per task family present in `examples` into `dir`.
/// Returns the written paths in task order.
std::vector<std::filesystem::path> write_examples(const std::vector<InstructionExample>& examples,
                                                  const std::filesystem::path& dir);

/// Every complete run of index tokens in `text` must resolve in `trie`.
/// Returns the number of indices seen; throws GenerationError otherwise.
int validate_index_tokens(std::string_view text, const IndexTrie& trie);

/// First `max_chars` UTF-8 code points of `s`.
std::string utf8_prefix(std::string_view s, std::size_t max_chars);

/// JSONL sidecars: `{item_id, intention}` and `{user_id, preference}`.
std::unordered_map<std::string, std::string> load_sidecar(const std::filesystem::path& path, const char* key_field,
                                                          const char* value_field);

}  // namespace semrec
