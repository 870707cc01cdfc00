// SPDX-License-Identifier: Apache-2.0
#include "semrec/instruct.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <iostream>
#include <random>

#include "semrec/errors.hpp"
#include "semrec/hashing.hpp"

namespace semrec {

namespace {

constexpr std::array<std::pair<TaskFamily, std::string_view>, 9> kTaskNames = {{
    {TaskFamily::kSeq, "SEQ"},
    {TaskFamily::kMutI2L, "MUT_I2L"},
    {TaskFamily::kMutL2I, "MUT_L2I"},
    {TaskFamily::kAsyTitle, "ASY_TITLE"},
    {TaskFamily::kAsyDesc, "ASY_DESC"},
    {TaskFamily::kAsyTitleSeq, "ASY_TITLESEQ"},
    {TaskFamily::kIteQuery, "ITE_QUERY"},
    {TaskFamily::kItePersonal, "ITE_PERSONAL"},
    {TaskFamily::kPer, "PER"},
}};

constexpr std::size_t kIntentionSurrogateChars = 200;

Json optional_json(const std::optional<std::string>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::string_view task_name(TaskFamily task) {
  for (const auto& [t, name] : kTaskNames)
    if (t == task) return name;
  return "UNKNOWN";
}

TaskFamily task_from_name(std::string_view name) {
  for (const auto& [t, n] : kTaskNames)
    if (n == name) return t;
  throw SchemaError(fmt::format("unknown task family '{}'", name));
}

const std::vector<TaskFamily>& all_tasks() {
  static const std::vector<TaskFamily> kAll = [] {
    std::vector<TaskFamily> v;
    for (const auto& [t, _] : kTaskNames) v.push_back(t);
    return v;
  }();
  return kAll;
}

std::string_view split_name(SplitKind split) {
  switch (split) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kValid: return "valid";
    case SplitKind::kTest: return "test";
  }
  return "unknown";
}

Json InstructionExample::to_json() const {
  return Json{{"task", task_name(task)},
              {"instruction", instruction},
              {"response", response},
              {"user_id", optional_json(user_id)},
              {"item_id", optional_json(item_id)},
              {"provenance", {{"intention", optional_json(intention_source)},
                              {"preference", optional_json(preference_source)}}}};
}

std::vector<SequenceExample> make_examples(const LooSplit& split, SplitKind kind) {
  std::vector<SequenceExample> out;
  for (const auto& u : split.users) {
    switch (kind) {
      case SplitKind::kTrain:
        for (std::size_t t = 1; t < u.train_items.size(); ++t)
          out.push_back({u.user_id, {u.train_items.begin(), u.train_items.begin() + static_cast<std::ptrdiff_t>(t)},
                         u.train_items[t]});
        break;
      case SplitKind::kValid:
        out.push_back({u.user_id, u.train_items, u.valid_target});
        break;
      case SplitKind::kTest: {
        auto history = u.train_items;
        history.push_back(u.valid_target);
        out.push_back({u.user_id, std::move(history), u.test_target});
        break;
      }
    }
  }
  return out;
}

ItemTextIndex::ItemTextIndex(const std::vector<ItemText>& in) : items(in) {
  lookup.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) lookup.emplace(items[i].item_id, i);
}

const ItemText* ItemTextIndex::find(std::string_view item_id) const {
  auto it = lookup.find(std::string(item_id));
  return it == lookup.end() ? nullptr : &items[it->second];
}

const ItemText& ItemTextIndex::at(std::string_view item_id) const {
  if (const auto* t = find(item_id)) return *t;
  throw GenerationError(fmt::format("item '{}' has no text record", item_id));
}

std::string render_history(const std::vector<std::string>& history, const IndexMapping& mapping) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out += ", ";
    out += token_form(mapping.at(history[i]));
  }
  return out;
}

std::vector<InstructionDatum> gen_seq(const std::vector<SequenceExample>& examples, const IndexMapping& mapping) {
  std::vector<InstructionDatum> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    InstructionDatum d;
    d.task = TaskFamily::kSeq;
    d.variant = "SEQ";
    d.fields["HISTORY"] = render_history(ex.history, mapping);
    d.response = token_form(mapping.at(ex.target));
    d.user_id = ex.user_id;
    d.item_id = ex.target;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<InstructionDatum> gen_mutual(const std::vector<ItemText>& items, const IndexMapping& mapping) {
  std::vector<InstructionDatum> out;
  for (const auto& item : items) {
    const std::string index = token_form(mapping.at(item.item_id));
    if (item.title.empty()) {
      std::cerr << "warning: item '" << item.item_id << "' has no title; skipped for mutual alignment\n";
      continue;
    }
    InstructionDatum l2i;
    l2i.task = TaskFamily::kMutL2I;
    l2i.variant = item.description.empty() ? "MUT_L2I_TITLE" : "MUT_L2I";
    l2i.fields["TITLE"] = item.title;
    if (!item.description.empty()) l2i.fields["DESC"] = item.description;
    l2i.response = index;
    l2i.item_id = item.item_id;
    out.push_back(std::move(l2i));

    InstructionDatum i2l;
    i2l.task = TaskFamily::kMutI2L;
    i2l.variant = "MUT_I2L";
    i2l.fields["INDEX"] = index;
    i2l.response = "Item Title: " + item.title;
    if (!item.description.empty()) i2l.response += "\nItem Description: " + item.description;
    i2l.item_id = item.item_id;
    out.push_back(std::move(i2l));
  }
  return out;
}

std::vector<InstructionDatum> gen_asymmetric(const std::vector<SequenceExample>& examples,
                                             const IndexMapping& mapping, const ItemTextIndex& texts) {
  std::vector<InstructionDatum> out;
  for (const auto& ex : examples) {
    const ItemText& target = texts.at(ex.target);
    const std::string history = render_history(ex.history, mapping);
    auto base = [&](TaskFamily task, const char* variant) {
      InstructionDatum d;
      d.task = task;
      d.variant = variant;
      d.user_id = ex.user_id;
      d.item_id = ex.target;
      return d;
    };
    if (!target.title.empty()) {
      auto d = base(TaskFamily::kAsyTitle, "ASY_TITLE");
      d.fields["HISTORY"] = history;
      d.response = target.title;
      out.push_back(std::move(d));
    }
    if (!target.description.empty()) {
      auto d = base(TaskFamily::kAsyDesc, "ASY_DESC");
      d.fields["HISTORY"] = history;
      d.response = target.description;
      out.push_back(std::move(d));
    }
    std::string titles;
    for (std::size_t i = 0; i < ex.history.size(); ++i) {
      if (i) titles += ", ";
      titles += "\"" + texts.at(ex.history[i]).title + "\"";
    }
    auto d = base(TaskFamily::kAsyTitleSeq, "ASY_TITLESEQ");
    d.fields["HISTORY"] = titles;
    d.response = token_form(mapping.at(ex.target));
    out.push_back(std::move(d));
  }
  return out;
}

std::string utf8_prefix(std::string_view s, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (chars == max_chars) return std::string(s.substr(0, i));
      ++chars;
    }
  }
  return std::string(s);
}

std::vector<InstructionDatum> gen_intention(const std::vector<SequenceExample>& examples,
                                            const IndexMapping& mapping, const ItemTextIndex& texts,
                                            const std::unordered_map<std::string, std::string>& sidecar) {
  std::vector<InstructionDatum> out;
  for (const auto& ex : examples) {
    std::string query;
    std::string source;
    if (auto it = sidecar.find(ex.target); it != sidecar.end() && !it->second.empty()) {
      query = it->second;
      source = "sidecar";
    } else if (const auto* t = texts.find(ex.target); t && !t->description.empty()) {
      query = utf8_prefix(t->description, kIntentionSurrogateChars);
      source = "surrogate";
    } else {
      std::cerr << "warning: no intention for item '" << ex.target << "'; skipped\n";
      continue;
    }
    const std::string response = token_form(mapping.at(ex.target));

    InstructionDatum q;
    q.task = TaskFamily::kIteQuery;
    q.variant = "ITE_QUERY";
    q.fields["QUERY"] = query;
    q.response = response;
    q.user_id = ex.user_id;
    q.item_id = ex.target;
    q.intention_source = source;
    out.push_back(q);

    InstructionDatum p = q;
    p.task = TaskFamily::kItePersonal;
    p.variant = "ITE_PERSONAL";
    p.fields["HISTORY"] = render_history(ex.history, mapping);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<InstructionDatum> gen_preference(const std::vector<SequenceExample>& examples,
                                             const IndexMapping& mapping, const ItemTextIndex& texts,
                                             const std::unordered_map<std::string, std::string>& sidecar) {
  // Longest history per user, in order of first appearance.
  std::vector<const SequenceExample*> chosen;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& ex : examples) {
    auto [it, inserted] = slot.emplace(ex.user_id, chosen.size());
    if (inserted)
      chosen.push_back(&ex);
    else if (ex.history.size() > chosen[it->second]->history.size())
      chosen[it->second] = &ex;
  }

  std::vector<InstructionDatum> out;
  for (const auto* ex : chosen) {
    if (ex->history.empty()) continue;
    InstructionDatum d;
    d.task = TaskFamily::kPer;
    d.variant = "PER";
    d.fields["HISTORY"] = render_history(ex->history, mapping);
    d.user_id = ex->user_id;
    if (auto it = sidecar.find(ex->user_id); it != sidecar.end() && !it->second.empty()) {
      d.response = it->second;
      d.preference_source = "sidecar";
    } else {
      std::map<int, int> freq;
      for (const auto& item : ex->history) ++freq[mapping.at(item).codes.front()];
      int top_code = freq.begin()->first;
      for (const auto& [code, count] : freq)
        if (count > freq[top_code]) top_code = code;
      std::vector<std::string> titles;
      for (auto it = ex->history.rbegin(); it != ex->history.rend() && titles.size() < 3; ++it) {
        if (mapping.at(*it).codes.front() != top_code) continue;
        const auto* t = texts.find(*it);
        if (t && !t->title.empty()) titles.push_back(t->title);
      }
      std::string joined;
      for (std::size_t i = 0; i < titles.size(); ++i) joined += (i ? "; " : "") + titles[i];
      if (joined.empty()) {
        std::cerr << "warning: no preference text for user '" << ex->user_id << "'; skipped\n";
        continue;
      }
      d.response = std::move(joined);
      d.preference_source = "surrogate";
    }
    out.push_back(std::move(d));
  }
  return out;
}

void canonical_sort(std::vector<InstructionDatum>& data) {
  std::stable_sort(data.begin(), data.end(), [](const InstructionDatum& a, const InstructionDatum& b) {
    if (a.task != b.task) return a.task < b.task;
    const std::string ua = a.user_id.value_or(""), ub = b.user_id.value_or("");
    if (ua != ub) return ua < ub;
    return a.item_id.value_or("") < b.item_id.value_or("");
  });
}

std::vector<InstructionExample> epoch_sample(const std::vector<InstructionDatum>& data, const TemplateBank& bank,
                                             int epoch, std::uint64_t seed) {
  std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(epoch))));
  std::vector<InstructionExample> out;
  out.reserve(data.size());
  for (const auto& d : data) {
    const auto& templates = bank.templates(d.variant);
    std::uniform_int_distribution<std::size_t> pick(0, templates.size() - 1);
    InstructionExample ex;
    ex.task = d.task;
    ex.instruction = render_template(templates[pick(rng)], d.fields);
    ex.response = d.response;
    ex.user_id = d.user_id;
    ex.item_id = d.item_id;
    ex.intention_source = d.intention_source;
    ex.preference_source = d.preference_source;
    if (ex.instruction.empty() || ex.response.empty())
      throw GenerationError(fmt::format("empty instruction or response for task {}", task_name(d.task)));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::filesystem::path> write_examples(const std::vector<InstructionExample>& examples,
                                                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (TaskFamily task : all_tasks()) {
    std::string body;
    for (const auto& ex : examples) {
      if (ex.task != task) continue;
      body += ex.to_json().dump(-1, ' ', false, Json::error_handler_t::replace);
      body += '\n';
    }
    if (body.empty()) continue;
    const auto path = dir / (std::string(task_name(task)) + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << body;
    written.push_back(path);
  }
  return written;
}

int validate_index_tokens(std::string_view text, const IndexTrie& trie) {
  int found = 0;
  std::size_t pos = 0;
  auto token_at = [&](std::size_t p, char& level, std::size_t& end) {
    if (p + 4 > text.size() || text[p] != '<' || text[p + 1] < 'a' || text[p + 1] > 'z' || text[p + 2] != '_')
      return false;
    std::size_t q = p + 3;
    while (q < text.size() && text[q] >= '0' && text[q] <= '9') ++q;
    if (q == p + 3 || q >= text.size() || text[q] != '>') return false;
    level = text[p + 1];
    end = q + 1;
    return true;
  };
  while ((pos = text.find('<', pos)) != std::string_view::npos) {
    char level = 0;
    std::size_t end = 0;
    if (!token_at(pos, level, end)) {
      ++pos;
      continue;
    }
    const std::size_t start = pos;
    while (token_at(pos, level, end)) pos = end;
    const std::string_view run = text.substr(start, pos - start);
    SemanticIndex idx;
    try {
      idx = parse_token_form(run);
    } catch (const ParseError& e) {
      throw GenerationError(fmt::format("malformed index tokens '{}': {}", run, e.what()));
    }
    if (idx.levels() != trie.levels() || !trie.contains(idx))
      throw GenerationError(fmt::format("index '{}' does not resolve to an item", run));
    ++found;
  }
  return found;
}

std::unordered_map<std::string, std::string> load_sidecar(const std::filesystem::path& path, const char* key_field,
                                                          const char* value_field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open sidecar '{}'", path.string()));
  std::unordered_map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(e.what(), line_no, e.byte);
    }
    if (!j.contains(key_field) || !j[key_field].is_string() || !j.contains(value_field) ||
        !j[value_field].is_string())
      throw SchemaError(fmt::format("sidecar record needs string '{}' and '{}'", key_field, value_field), line_no);
    out[j[key_field].get<std::string>()] = j[value_field].get<std::string>();
  }
  return out;
}

}  // namespace semrec
