// SPDX-License-Identifier: Apache-2.0
#include <fmt/format.h>

#include <set>

#include "semrec/errors.hpp"
#include "semrec/instruct.hpp"

namespace semrec {

namespace {

std::set<std::string> placeholders_in(const std::string& tmpl) {
  std::set<std::string> out;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string::npos) break;
    out.insert(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

}  // namespace

const std::map<std::string, std::vector<std::string>>& TemplateBank::required_placeholders() {
  static const std::map<std::string, std::vector<std::string>> kRequired = {
      {"SEQ", {"HISTORY"}},
      {"MUT_L2I", {"DESC", "TITLE"}},
      {"MUT_L2I_TITLE", {"TITLE"}},
      {"MUT_I2L", {"INDEX"}},
      {"ASY_TITLE", {"HISTORY"}},
      {"ASY_DESC", {"HISTORY"}},
      {"ASY_TITLESEQ", {"HISTORY"}},
      {"ITE_QUERY", {"QUERY"}},
      {"ITE_PERSONAL", {"HISTORY", "QUERY"}},
      {"PER", {"HISTORY"}},
  };
  return kRequired;
}

TemplateBank::TemplateBank(std::map<std::string, std::vector<std::string>> templates)
    : templates_(std::move(templates)) {
  const auto& required = required_placeholders();
  for (const auto& [variant, list] : templates_) {
    auto it = required.find(variant);
    if (it == required.end()) throw SchemaError(fmt::format("unknown template variant '{}'", variant));
    if (list.empty()) throw SchemaError(fmt::format("template variant '{}' is empty", variant));
    const std::set<std::string> want(it->second.begin(), it->second.end());
    for (const auto& t : list) {
      if (placeholders_in(t) != want)
        throw SchemaError(fmt::format("template for '{}' has the wrong placeholders: {}", variant, t));
    }
  }
  for (const auto& [variant, _] : required)
    if (!templates_.count(variant)) throw SchemaError(fmt::format("template variant '{}' is missing", variant));
}

const std::vector<std::string>& TemplateBank::templates(const std::string& variant) const {
  auto it = templates_.find(variant);
  if (it == templates_.end()) throw GenerationError(fmt::format("no templates for variant '{}'", variant));
  return it->second;
}

TemplateBank TemplateBank::from_json(const Json& j) {
  try {
    return TemplateBank(j.get<std::map<std::string, std::vector<std::string>>>());
  } catch (const Json::exception& e) {
    throw SchemaError(fmt::format("template bank: {}", e.what()));
  }
}

TemplateBank TemplateBank::builtin() {
  return TemplateBank({
      {"SEQ",
       {"Here are the user's historical interactions: {HISTORY}, try to recommend another item to the user. "
        "Note that the historical interactions are arranged in chronological order.",
        "The user has interacted with the following items in chronological order: {HISTORY}. "
        "Predict the next item the user will interact with.",
        "Given the interaction history {HISTORY} (oldest first), which item should be recommended next?"}},
      {"MUT_L2I",
       {"An item is called \"{TITLE}\" and described as \"{DESC}\", can you tell me which item it is?",
        "Which item has the title \"{TITLE}\" and the description \"{DESC}\"?",
        "Identify the item titled \"{TITLE}\" whose description reads: \"{DESC}\"."}},
      {"MUT_L2I_TITLE",
       {"An item is called \"{TITLE}\", can you tell me which item it is?",
        "Which item has the title \"{TITLE}\"?",
        "Identify the item titled \"{TITLE}\"."}},
      {"MUT_I2L",
       {"Please tell me what item {INDEX} is called, along with a brief description of it.",
        "What is the title of item {INDEX}, and how would you describe it?",
        "Give the title and a short description of the item {INDEX}."}},
      {"ASY_TITLE",
       {"Based on the user's historical interactions: {HISTORY}, try to predict the title of the item that the "
        "user may need next.",
        "The user has interacted with {HISTORY} in chronological order. What is the title of the next item?",
        "Given the interaction history {HISTORY}, name the item the user is likely to choose next."}},
      {"ASY_DESC",
       {"Here is the item interaction history of the user: {HISTORY}, please tell me what features the user "
        "expects from the next item.",
        "Considering the items {HISTORY} the user interacted with, describe the item the user wants next.",
        "From the interaction history {HISTORY}, infer the characteristics of the user's next item."}},
      {"ASY_TITLESEQ",
       {"Given the title sequence of user historical interactive items: {HISTORY}, can you recommend a suitable "
        "next item for the user?",
        "The user has recently engaged with these items, in order: {HISTORY}. Recommend the next item.",
        "Here are the titles of items the user interacted with: {HISTORY}. Which item should come next?"}},
      {"ITE_QUERY",
       {"Suppose you are a search engine, now a user searches that: \"{QUERY}\", can you select an item to "
        "respond to the user's query?",
        "A user is looking for the following: \"{QUERY}\". Which item best matches this request?",
        "Find an item that satisfies this query: \"{QUERY}\"."}},
      {"ITE_PERSONAL",
       {"As a recommender system, you are assisting a user who has recently interacted with the following "
        "items: {HISTORY}. The user expresses a desire to obtain another item with the following "
        "characteristics: \"{QUERY}\". Please recommend an item that meets these criteria.",
        "The user's interaction history is {HISTORY}. The user now wants: \"{QUERY}\". Recommend a suitable item.",
        "Given the history {HISTORY} and the request \"{QUERY}\", which item should be recommended?"}},
      {"PER",
       {"Utilizing the ordered list of the user's historical interaction items as a reference, please make an "
        "informed estimation of the user's preferences. The historical interactions are as follows: {HISTORY}.",
        "Here is the user's interaction history: {HISTORY}. Summarize the user's preferences.",
        "Based on the items {HISTORY} the user interacted with, describe what the user tends to like."}},
  });
}

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    auto it = fields.find(name);
    if (it == fields.end()) throw GenerationError(fmt::format("template field '{}' has no value", name));
    out += it->second;
    pos = close + 1;
  }
  return out;
}

}  // namespace semrec
