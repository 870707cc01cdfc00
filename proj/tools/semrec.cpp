// SPDX-License-Identifier: Apache-2.0
// semrec: semantic item indexing and generative recommendation pipeline.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semrec/errors.hpp"
#include "semrec/json.hpp"
#include "semrec/pipeline.hpp"

namespace {

using semrec::Json;

// Sets a dotted key ("recgen.model.dim") in a JSON document, creating objects on the way.
void set_dotted(Json& doc, const std::string& dotted, Json value) {
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw semrec::ConfigError(fmt::format("bad config key '{}'", dotted));
    if (!node->is_object()) throw semrec::ConfigError(fmt::format("'{}' does not name an object", dotted));
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

// "--set key=value": the value is parsed as JSON, or taken as a plain string when that fails.
std::pair<std::string, Json> parse_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw semrec::ConfigError(fmt::format("--set expects key=value, got '{}'", s));
  const std::string text = s.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  return {s.substr(0, eq), value};
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
  bool print_config = false;
  std::vector<std::string> sets;
  std::map<std::string, std::string> paths;  // config key -> flag value
  std::optional<int> beam;
  std::vector<int> ks;
  std::optional<std::string> split;
  std::optional<int> rqvae_epochs;
  std::optional<int> rec_epochs;
  std::optional<int> instruct_epochs;
};

semrec::PipelineConfig build_config(const Options& o) {
  Json doc = Json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config, std::ios::binary);
    if (!in) throw semrec::ConfigError(fmt::format("config file '{}' does not exist", o.config));
    doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
      throw semrec::ConfigError(fmt::format("config file '{}' is not a JSON object", o.config));
  }
  for (const auto& [key, value] : o.paths) set_dotted(doc, "paths." + key, value);
  if (o.beam) set_dotted(doc, "eval.beam", *o.beam);
  if (!o.ks.empty()) set_dotted(doc, "eval.ks", o.ks);
  if (o.split) set_dotted(doc, "eval.split", *o.split);
  if (o.rqvae_epochs) set_dotted(doc, "rqvae.train.epochs", *o.rqvae_epochs);
  if (o.rec_epochs) set_dotted(doc, "recgen.epochs", *o.rec_epochs);
  if (o.instruct_epochs) set_dotted(doc, "instruct.epochs", *o.instruct_epochs);
  for (const auto& s : o.sets) {
    auto [key, value] = parse_assignment(s);
    set_dotted(doc, key, std::move(value));
  }
  semrec::PipelineConfig cfg = semrec::pipeline_config_from_json(doc);
  if (o.seed) cfg.apply_seed(*o.seed);
  // Read-only inputs must exist before any work starts; embeddings, interactions
  // and texts can also be stage outputs, so their stages check them.
  for (const auto& p : {cfg.paths.intention_sidecar, cfg.paths.preference_sidecar, cfg.paths.templates,
                        cfg.paths.reviews, cfg.paths.reviews_meta})
    if (p && !std::filesystem::exists(*p))
      throw semrec::ConfigError(fmt::format("input '{}' does not exist", p->string()));
  return cfg;
}

using StageFn = semrec::StageOutcome (*)(const semrec::PipelineConfig&, const semrec::RunOptions&);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic item indexing and generative recommendation"};
  app.set_version_flag("--version", std::string(semrec::kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("-c,--config", o.config, "JSON configuration file");
  app.add_option("--seed", o.seed, "Overrides every module seed");
  app.add_flag("--force", o.force, "Rerun stages even when their inputs are unchanged");
  app.add_flag("-q,--quiet", o.quiet, "No progress output");
  app.add_flag("--print-config", o.print_config, "Print the effective configuration and exit");
  app.add_option("--set", o.sets, "Override any config key: --set recgen.model.dim=32");
  const std::vector<std::pair<std::string, std::string>> path_flags = {
      {"--output-dir", "output_dir"},
      {"--embeddings", "embeddings"},
      {"--interactions", "interactions"},
      {"--texts", "texts"},
      {"--intention-sidecar", "intention_sidecar"},
      {"--preference-sidecar", "preference_sidecar"},
      {"--templates", "templates"},
      {"--reviews", "reviews"},
      {"--reviews-meta", "reviews_meta"},
  };
  for (const auto& [flag, key] : path_flags)
    app.add_option_function<std::string>(flag, [&o, key = key](const std::string& v) { o.paths[key] = v; },
                                         fmt::format("Overrides paths.{}", key));
  app.add_option("--beam", o.beam, "Overrides eval.beam (default 20)");
  app.add_option("--ks", o.ks, "Overrides eval.ks");
  app.add_option("--split", o.split, "Overrides eval.split (test or valid)");
  app.add_option("--rqvae-epochs", o.rqvae_epochs, "Overrides rqvae.train.epochs");
  app.add_option("--rec-epochs", o.rec_epochs, "Overrides recgen.epochs");
  app.add_option("--instruct-epochs", o.instruct_epochs, "Overrides instruct.epochs");

  const std::vector<std::tuple<std::string, std::string, std::vector<StageFn>>> commands = {
      {"synth", "Generate the planted-cluster synthetic corpus", {&semrec::run_synth}},
      {"embed-texts", "Hash-embed item texts into an embeddings file", {&semrec::run_embed_texts}},
      {"convert-reviews", "Convert Amazon review and metadata dumps", {&semrec::run_convert_reviews}},
      {"index-train", "Train the residual-quantized autoencoder", {&semrec::run_index_train}},
      {"index-assign", "Assign conflict-free semantic indices to all items", {&semrec::run_index_assign}},
      {"instruct-gen", "Emit instruction-tuning JSONL files", {&semrec::run_instruct_gen}},
      {"rec-train", "Train the sequence recommender", {&semrec::run_rec_train}},
      {"rec-eval", "Constrained beam search and full-ranking metrics", {&semrec::run_rec_eval}},
      {"all",
       "synth, index-train, index-assign, instruct-gen, rec-train and rec-eval in order",
       {&semrec::run_synth, &semrec::run_index_train, &semrec::run_index_assign, &semrec::run_instruct_gen,
        &semrec::run_rec_train, &semrec::run_rec_eval}},
  };
  std::vector<std::pair<CLI::App*, const std::vector<StageFn>*>> subs;
  for (const auto& [name, help, fns] : commands) subs.emplace_back(app.add_subcommand(name, help), &fns);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(semrec::ExitCode::kConfig);
  }

  try {
    const semrec::PipelineConfig cfg = build_config(o);
    if (o.print_config) {
      std::cout << semrec::to_json(cfg).dump(2) << '\n';
      return 0;
    }
    semrec::RunOptions run{o.force, o.quiet ? nullptr : &std::cerr};
    for (const auto& [sub, fns] : subs) {
      if (!sub->parsed()) continue;
      for (StageFn fn : *fns) {
        const auto outcome = fn(cfg, run);
        if (!outcome.summary.empty()) std::cout << outcome.stage << ": " << outcome.summary.dump() << '\n';
      }
    }
    return 0;
  } catch (const semrec::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(semrec::ExitCode::kData);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(semrec::ExitCode::kConfig);
  }
}
