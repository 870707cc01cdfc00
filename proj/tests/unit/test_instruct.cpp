// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "semrec/errors.hpp"
#include "semrec/instruct.hpp"
#include "test_util.hpp"

using namespace semrec;

namespace {

struct Fixture {
  IndexMapping mapping;
  std::vector<ItemText> texts;
  LooSplit split;

  Fixture() {
    std::vector<std::string> ids;
    std::vector<SemanticIndex> idx;
    for (int i = 1; i <= 8; ++i) {
      ids.push_back("i" + std::to_string(i));
      idx.push_back({{i % 2, i, 7, i % 3}});
      texts.push_back({ids.back(), "Title " + std::to_string(i), i == 3 ? "" : "Description of item " + std::to_string(i)});
    }
    texts[6].title = "Pokémon Moon - Nintendo 3DS";
    mapping = IndexMapping(4, 16, ids, idx);
    split.users = {{"u1", {"i1", "i2", "i3"}, "i4", "i5"}, {"u2", {"i6"}, "i7", "i8"}, {"u3", {"i2", "i7"}, "i3", "i1"}};
  }
};

std::string tf(const Fixture& f, const std::string& item) { return token_form(f.mapping.at(item)); }

// Every rendering of a datum under the bank's templates for its variant.
std::set<std::string> renderings(const InstructionDatum& d, const TemplateBank& bank) {
  std::set<std::string> out;
  for (const auto& t : bank.templates(d.variant)) out.insert(render_template(t, d.fields));
  return out;
}

std::vector<InstructionDatum> all_data(const Fixture& f, const std::unordered_map<std::string, std::string>& intents = {},
                                       const std::unordered_map<std::string, std::string>& prefs = {}) {
  const ItemTextIndex texts(f.texts);
  std::vector<InstructionDatum> data;
  for (auto kind : {SplitKind::kTrain, SplitKind::kValid}) {
    const auto ex = make_examples(f.split, kind);
    for (auto&& v : {gen_seq(ex, f.mapping), gen_asymmetric(ex, f.mapping, texts),
                     gen_intention(ex, f.mapping, texts, intents), gen_preference(ex, f.mapping, texts, prefs)})
      data.insert(data.end(), v.begin(), v.end());
  }
  const auto mut = gen_mutual(f.texts, f.mapping);
  data.insert(data.end(), mut.begin(), mut.end());
  canonical_sort(data);
  return data;
}

}  // namespace

TEST_CASE("make_examples follows the split definition") {
  Fixture f;
  const auto train = make_examples(f.split, SplitKind::kTrain);
  // u1: 2 prefixes, u2: none, u3: 1.
  REQUIRE(train.size() == 3);
  CHECK(train[0].history == std::vector<std::string>{"i1"});
  CHECK(train[0].target == "i2");
  CHECK(train[1].history == std::vector<std::string>{"i1", "i2"});
  CHECK(train[1].target == "i3");
  const auto valid = make_examples(f.split, SplitKind::kValid);
  REQUIRE(valid.size() == 3);
  CHECK(valid[1].history == std::vector<std::string>{"i6"});
  CHECK(valid[1].target == "i7");
  const auto test = make_examples(f.split, SplitKind::kTest);
  CHECK(test[0].history == std::vector<std::string>{"i1", "i2", "i3", "i4"});
  CHECK(test[0].target == "i5");
}

TEST_CASE("gen_seq: history tokens in the instruction, target tokens as response") {
  Fixture f;
  const std::vector<SequenceExample> ex{{"u", {"i1"}, "i2"}};
  const auto d = gen_seq(ex, f.mapping);
  REQUIRE(d.size() == 1);
  const auto out = epoch_sample(d, TemplateBank::builtin(), 0, 1);
  CHECK(out[0].instruction.find(tf(f, "i1")) != std::string::npos);
  CHECK(out[0].response == tf(f, "i2"));
  CHECK(out[0].response == "<a_0><b_2><c_7><d_2>");

  // The first built-in template mirrors the classic phrasing.
  const auto first = render_template(TemplateBank::builtin().templates("SEQ")[0], d[0].fields);
  CHECK(first.rfind("Here are the user's historical interactions: <a_1><b_1><c_7><d_1>", 0) == 0);
}

TEST_CASE("gen_mutual: both directions and the title-only variant") {
  Fixture f;
  const auto d = gen_mutual(f.texts, f.mapping);
  CHECK(d.size() == 16);
  for (const auto& x : d) {
    if (x.task == TaskFamily::kMutL2I) {
      CHECK(parse_token_form(x.response) == f.mapping.at(*x.item_id));
      CHECK(x.variant == (*x.item_id == "i3" ? "MUT_L2I_TITLE" : "MUT_L2I"));
    } else {
      CHECK(x.task == TaskFamily::kMutI2L);
      CHECK(x.fields.at("INDEX") == tf(f, *x.item_id));
      CHECK(x.response.rfind("Item Title: ", 0) == 0);
    }
  }
  const auto* pokemon = &d[12];
  CHECK(*pokemon->item_id == "i7");
  CHECK(pokemon->fields.at("TITLE") == "Pokémon Moon - Nintendo 3DS");
  CHECK(d[5].response == "Item Title: Title 3");  // no description line

  std::vector<ItemText> untitled{{"i1", "", "desc"}};
  CHECK(gen_mutual(untitled, f.mapping).empty());
}

TEST_CASE("gen_asymmetric: three variants and length-1 histories") {
  Fixture f;
  const ItemTextIndex texts(f.texts);
  const std::vector<SequenceExample> ex{{"u", {"i6"}, "i7"}, {"u", {"i1", "i2"}, "i3"}};
  const auto d = gen_asymmetric(ex, f.mapping, texts);
  // i7 has title and description; i3 has no description.
  REQUIRE(d.size() == 5);
  CHECK(d[0].task == TaskFamily::kAsyTitle);
  CHECK(d[0].fields.at("HISTORY") == tf(f, "i6"));
  CHECK(d[0].response == "Pokémon Moon - Nintendo 3DS");
  CHECK(d[1].task == TaskFamily::kAsyDesc);
  CHECK(d[1].response == "Description of item 7");
  CHECK(d[2].task == TaskFamily::kAsyTitleSeq);
  CHECK(d[2].fields.at("HISTORY") == "\"Title 6\"");
  CHECK(d[2].response == tf(f, "i7"));
  CHECK(d[3].task == TaskFamily::kAsyTitle);
  CHECK(d[4].task == TaskFamily::kAsyTitleSeq);
  CHECK(d[4].fields.at("HISTORY") == "\"Title 1\", \"Title 2\"");
}

TEST_CASE("gen_intention: sidecar first, description surrogate second") {
  Fixture f;
  const ItemTextIndex texts(f.texts);
  const std::vector<SequenceExample> ex{{"u", {"i1"}, "i7"}, {"u", {"i1"}, "i2"}, {"u", {"i1"}, "i3"}};
  const auto d = gen_intention(ex, f.mapping, texts, {{"i7", "a handheld adventure game"}});
  // i3 has neither sidecar nor description, so it is skipped.
  REQUIRE(d.size() == 4);
  CHECK(d[0].task == TaskFamily::kIteQuery);
  CHECK(d[0].fields.at("QUERY") == "a handheld adventure game");
  CHECK(d[0].intention_source == "sidecar");
  CHECK(d[0].response == tf(f, "i7"));
  CHECK(d[1].task == TaskFamily::kItePersonal);
  CHECK(d[1].fields.at("HISTORY") == tf(f, "i1"));
  CHECK(d[2].fields.at("QUERY") == "Description of item 2");
  CHECK(d[2].intention_source == "surrogate");

  const auto first = render_template(TemplateBank::builtin().templates("ITE_QUERY")[0], d[0].fields);
  CHECK(first.rfind("Suppose you are a search engine, now a user searches that: \"a handheld", 0) == 0);
}

TEST_CASE("utf8_prefix counts code points") {
  CHECK(utf8_prefix("abc", 2) == "ab");
  CHECK(utf8_prefix("é漢字x", 3) == "é漢字");
  CHECK(utf8_prefix("short", 200) == "short");
  const std::string long_text(500, 'x');
  CHECK(utf8_prefix(long_text, 200).size() == 200);
}

TEST_CASE("gen_preference: sidecar or most-frequent-code titles from the longest history") {
  Fixture f;
  const ItemTextIndex texts(f.texts);
  const std::vector<SequenceExample> ex{
      {"u1", {"i1"}, "i2"}, {"u1", {"i1", "i2", "i3", "i5"}, "i4"}, {"u2", {"i6"}, "i7"}};
  const auto d = gen_preference(ex, f.mapping, texts, {{"u2", "likes handheld games"}});
  REQUIRE(d.size() == 2);
  // Level-1 codes: i1 -> 1, i2 -> 0, i3 -> 1, i5 -> 1. Code 1 wins; most recent first.
  CHECK(d[0].user_id == "u1");
  CHECK(d[0].fields.at("HISTORY") == tf(f, "i1") + ", " + tf(f, "i2") + ", " + tf(f, "i3") + ", " + tf(f, "i5"));
  CHECK(d[0].response == "Title 5; Title 3; Title 1");
  CHECK(d[0].preference_source == "surrogate");
  CHECK(d[1].response == "likes handheld games");
  CHECK(d[1].preference_source == "sidecar");
}

TEST_CASE("epoch_sample: one template per datum, exactly once") {
  Fixture f;
  const auto bank = TemplateBank::builtin();
  const auto data = all_data(f);
  for (int epoch = 0; epoch < 2; ++epoch) {
    const auto out = epoch_sample(data, bank, epoch, 7);
    REQUIRE(out.size() == data.size());
    // Position i of the output is datum i rendered with one of its variant's templates.
    std::multiset<std::string> got, want;
    for (std::size_t i = 0; i < data.size(); ++i) {
      CHECK(renderings(data[i], bank).count(out[i].instruction) == 1);
      CHECK(out[i].response == data[i].response);
      CHECK(out[i].task == data[i].task);
      got.insert(std::string(task_name(out[i].task)) + "|" + out[i].response + "|" + out[i].user_id.value_or("") + "|" +
                 out[i].item_id.value_or(""));
      want.insert(std::string(task_name(data[i].task)) + "|" + data[i].response + "|" +
                  data[i].user_id.value_or("") + "|" + data[i].item_id.value_or(""));
    }
    CHECK(got == want);
  }
}

TEST_CASE("epoch_sample: ten data give ten lines per family per epoch") {
  Fixture f;
  std::vector<SequenceExample> ex;
  for (int i = 0; i < 10; ++i) ex.push_back({"u" + std::to_string(i), {"i1", "i2"}, "i3"});
  const auto data = gen_seq(ex, f.mapping);
  testing::TempDir dir("instruct");
  for (int epoch = 0; epoch < 2; ++epoch) {
    const auto paths = write_examples(epoch_sample(data, TemplateBank::builtin(), epoch, 1),
                                      dir / ("e" + std::to_string(epoch)));
    REQUIRE(paths.size() == 1);
    const auto text = testing::read_file(paths[0]);
    CHECK(std::count(text.begin(), text.end(), '\n') == 10);
  }
}

TEST_CASE("epoch_sample is byte-deterministic under (seed, epoch)") {
  Fixture f;
  const auto data = all_data(f, {{"i4", "sidecar intention"}});
  testing::TempDir a("instruct_a"), b("instruct_b");
  const auto pa = write_examples(epoch_sample(data, TemplateBank::builtin(), 3, 99), a.path());
  const auto pb = write_examples(epoch_sample(data, TemplateBank::builtin(), 3, 99), b.path());
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].filename() == pb[i].filename());
    CHECK(testing::read_file(pa[i]) == testing::read_file(pb[i]));
  }
  // A different epoch reshuffles template choices.
  bool differs = false;
  const auto e3 = epoch_sample(data, TemplateBank::builtin(), 3, 99), e4 = epoch_sample(data, TemplateBank::builtin(), 4, 99);
  for (std::size_t i = 0; i < e3.size(); ++i) differs |= e3[i].instruction != e4[i].instruction;
  CHECK(differs);
}

TEST_CASE("across four epochs every template is used") {
  Fixture f;
  const auto bank = TemplateBank::builtin();
  const auto data = all_data(f);
  std::map<std::string, std::set<std::string>> used;
  for (int epoch = 0; epoch < 4; ++epoch) {
    const auto out = epoch_sample(data, bank, epoch, 42);
    for (std::size_t i = 0; i < data.size(); ++i)
      for (const auto& t : bank.templates(data[i].variant))
        if (render_template(t, data[i].fields) == out[i].instruction) used[data[i].variant].insert(t);
  }
  // A variant with n data gets 4n draws; with n >= 5 a missing template has
  // probability below 1e-3, so smaller variants are only reported.
  int checked = 0;
  for (const auto& [variant, list] : bank.all()) {
    const auto n = std::count_if(data.begin(), data.end(), [&](const auto& d) { return d.variant == variant; });
    if (n < 5) {
      MESSAGE(variant << ": " << n << " data, " << used[variant].size() << " of " << list.size() << " templates seen");
      continue;
    }
    ++checked;
    CHECK_MESSAGE(used[variant].size() == list.size(), variant);
  }
  CHECK(checked >= 5);
}

TEST_CASE("JSONL records follow the documented schema") {
  Fixture f;
  const auto data = all_data(f, {{"i4", "wants a thing"}}, {{"u1", "likes things"}});
  const auto out = epoch_sample(data, TemplateBank::builtin(), 0, 5);
  std::set<std::string> tasks;
  for (const auto& ex : out) {
    const Json j = ex.to_json();
    CHECK(j["task"].is_string());
    tasks.insert(j["task"].get<std::string>());
    CHECK(j["instruction"].is_string());
    CHECK(j["response"].is_string());
    CHECK((j["user_id"].is_string() || j["user_id"].is_null()));
    CHECK((j["item_id"].is_string() || j["item_id"].is_null()));
    CHECK(j["provenance"].contains("intention"));
    const auto& src = j["provenance"]["intention"];
    CHECK((src.is_null() || src == "sidecar" || src == "surrogate"));
  }
  CHECK(tasks.size() == all_tasks().size());
}

TEST_CASE("validate_index_tokens resolves every run against the trie") {
  Fixture f;
  const auto trie = IndexTrie::build(f.mapping);
  const auto data = all_data(f);
  for (const auto& ex : epoch_sample(data, TemplateBank::builtin(), 0, 1)) {
    validate_index_tokens(ex.instruction, trie);
    validate_index_tokens(ex.response, trie);
  }
  CHECK(validate_index_tokens("see " + tf(f, "i1") + ", " + tf(f, "i2"), trie) == 2);
  CHECK(validate_index_tokens("no tokens <here>", trie) == 0);
  CHECK_THROWS_AS(validate_index_tokens("<a_1><b_1><c_7><d_2>", trie), GenerationError);  // not an item
  CHECK_THROWS_AS(validate_index_tokens("<a_1><b_1>", trie), GenerationError);            // too short
  CHECK_THROWS_AS(validate_index_tokens("<a_1><c_1>", trie), GenerationError);            // skips a level
}

TEST_CASE("template bank validation") {
  using Bank = std::map<std::string, std::vector<std::string>>;
  auto make = [](Bank b) { return TemplateBank(std::move(b)); };
  CHECK_THROWS_AS(make(Bank{{"SEQ", {"no placeholder"}}}), SchemaError);
  auto all = TemplateBank::builtin().all();
  all["SEQ"] = {"History {HISTORY} and {TITLE}"};
  CHECK_THROWS_AS(make(all), SchemaError);
  all = TemplateBank::builtin().all();
  all.erase("PER");
  CHECK_THROWS_AS(make(all), SchemaError);
  all = TemplateBank::builtin().all();
  all["BOGUS"] = {"x"};
  CHECK_THROWS_AS(make(all), SchemaError);
  CHECK_THROWS_AS(render_template("{MISSING}", {}), GenerationError);
  CHECK(task_from_name("ITE_PERSONAL") == TaskFamily::kItePersonal);
  CHECK_THROWS_AS(task_from_name("NOPE"), SchemaError);
}

TEST_CASE("sidecars load from JSON Lines") {
  testing::TempDir dir("instruct");
  testing::write_file(dir / "s.jsonl", "{\"item_id\": \"i1\", \"intention\": \"fast\"}\n\n{\"item_id\": \"i2\", \"intention\": \"cheap\"}\n");
  const auto s = load_sidecar(dir / "s.jsonl", "item_id", "intention");
  CHECK(s.size() == 2);
  CHECK(s.at("i2") == "cheap");
  testing::write_file(dir / "bad.jsonl", "{\"item_id\": \"i1\"}\n");
  CHECK_THROWS_AS(load_sidecar(dir / "bad.jsonl", "item_id", "intention"), SchemaError);
}
