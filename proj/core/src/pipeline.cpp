// SPDX-License-Identifier: Apache-2.0
#include "semrec/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>

#include "semrec/beam_search.hpp"
#include "semrec/errors.hpp"
#include "semrec/hashing.hpp"
#include "semrec/instruct.hpp"
#include "semrec/metrics.hpp"

namespace semrec {

namespace fs = std::filesystem;

namespace {

Json path_json(const std::optional<fs::path>& p) { return p ? Json(p->string()) : Json(nullptr); }

std::optional<fs::path> path_from(const Json& j, const char* key, std::optional<fs::path> d) {
  if (!j.contains(key)) return d;
  if (j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) throw ConfigError(fmt::format("paths.{} must be a string or null", key));
  return fs::path(j[key].get<std::string>());
}

template <class T>
T get_or(const Json& j, const char* key, T d) {
  if (!j.contains(key)) return d;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

void check_keys(const Json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", section));
  for (const auto& [k, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw ConfigError(fmt::format("unknown config key '{}{}{}'", section, *section ? "." : "", k));
}

void write_json(const fs::path& path, const Json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << j.dump(2) << '\n';
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(fmt::format("'{}': {}", path.string(), e.what()), 0, e.byte);
  }
}

void require_input(const fs::path& p, const char* what) {
  if (!fs::exists(p))
    throw ConfigError(fmt::format("{} '{}' does not exist (run the producing stage or set its path)", what, p.string()));
}

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os) {}
  template <class... A>
  void operator()(fmt::format_string<A...> f, A&&... args) const {
    if (os_) *os_ << fmt::format(f, std::forward<A>(args)...) << '\n' << std::flush;
  }

 private:
  std::ostream* os_;
};

// Restart guard: a stage is skipped when its configuration, the contents of
// its inputs and the contents of its recorded outputs are all unchanged.
class StageStamp {
 public:
  StageStamp(const PipelineConfig& cfg, std::string stage, const Json& stage_cfg, const std::vector<fs::path>& inputs)
      : path_(cfg.paths.output_dir / "stamps" / (stage + ".json")) {
    Json in = Json::array();
    for (const auto& p : inputs) in.push_back(file_sha256(p));
    key_ = sha256_hex(Json{{"stage", stage}, {"config", stage_cfg}, {"inputs", in}, {"version", kToolVersion}}.dump());
  }

  std::optional<std::vector<fs::path>> fresh() const {
    if (!fs::exists(path_)) return std::nullopt;
    Json j;
    try {
      j = read_json(path_);
    } catch (const Error&) {
      return std::nullopt;
    }
    if (j.value("key", "") != key_) return std::nullopt;
    std::vector<fs::path> outputs;
    for (const auto& o : j.value("outputs", Json::array())) {
      const fs::path p = o.at("path").get<std::string>();
      if (!fs::exists(p) || file_sha256(p) != o.at("sha256").get<std::string>()) return std::nullopt;
      outputs.push_back(p);
    }
    return outputs;
  }

  void commit(const std::vector<fs::path>& outputs) const {
    Json out = Json::array();
    for (const auto& p : outputs) out.push_back({{"path", p.string()}, {"sha256", file_sha256(p)}});
    write_json(path_, {{"key", key_}, {"outputs", out}});
  }

 private:
  fs::path path_;
  std::string key_;
};

std::optional<StageOutcome> skip_if_fresh(const StageStamp& stamp, const std::string& stage, const RunOptions& opts) {
  if (opts.force) return std::nullopt;
  if (auto outputs = stamp.fresh()) {
    Logger(opts.log)("{}: up to date, nothing to do (use --force to rerun)", stage);
    return StageOutcome{stage, true, *outputs, Json::object()};
  }
  return std::nullopt;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SplitKind split_from_name(const std::string& s) {
  if (s == "test") return SplitKind::kTest;
  if (s == "valid") return SplitKind::kValid;
  throw ConfigError(fmt::format("eval.split must be 'test' or 'valid', got '{}'", s));
}

}  // namespace

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  embed.seed = s;
  rqvae.seed = s;
  instruct.seed = s;
  recgen.seed = s;
}

fs::path PipelineConfig::embeddings_path() const { return paths.embeddings.value_or(data_dir() / "embeddings.jsonl"); }
fs::path PipelineConfig::interactions_path() const {
  return paths.interactions.value_or(data_dir() / "interactions.tsv");
}
fs::path PipelineConfig::texts_path() const { return paths.texts.value_or(data_dir() / "items.jsonl"); }

Json to_json(const PipelineConfig& c) {
  Json train = to_json(c.rqvae);
  for (const char* k : {"seed", "usm_enabled", "sinkhorn_epsilon", "sinkhorn_iters"}) train.erase(k);
  Json arch = to_json(c.rqvae_arch);
  arch.erase("d_emb");
  Json synth = to_json(c.synth);
  synth.erase("seed");
  Json recgen = to_json(c.recgen);
  recgen.erase("seed");
  recgen["model"].erase("levels");
  recgen["model"].erase("codes");
  return Json{
      {"seed", c.seed},
      {"paths",
       {{"output_dir", c.paths.output_dir.string()},
        {"embeddings", path_json(c.paths.embeddings)},
        {"interactions", path_json(c.paths.interactions)},
        {"texts", path_json(c.paths.texts)},
        {"intention_sidecar", path_json(c.paths.intention_sidecar)},
        {"preference_sidecar", path_json(c.paths.preference_sidecar)},
        {"templates", path_json(c.paths.templates)},
        {"reviews", path_json(c.paths.reviews)},
        {"reviews_meta", path_json(c.paths.reviews_meta)}}},
      {"synth", synth},
      {"corpus", {{"min_count", c.corpus.min_count}, {"max_len", c.corpus.max_len}}},
      {"embed", {{"d_emb", c.embed.d_emb}, {"standardize", c.embed.standardize}}},
      {"rqvae", {{"arch", arch}, {"train", train}}},
      {"usm",
       {{"enabled", c.rqvae.usm_enabled},
        {"epsilon", c.rqvae.sinkhorn_epsilon},
        {"iterations", c.rqvae.sinkhorn_iters}}},
      {"instruct", {{"epochs", c.instruct.epochs}, {"tasks", c.instruct.tasks}}},
      {"recgen", recgen},
      {"eval", {{"beam", c.eval.beam}, {"ks", c.eval.ks}, {"split", c.eval.split}}},
  };
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  check_keys(j, "", {"seed", "paths", "synth", "corpus", "embed", "rqvae", "usm", "instruct", "recgen", "eval"});
  try {
    if (j.contains("paths")) {
      const Json& p = j["paths"];
      check_keys(p, "paths",
                 {"output_dir", "embeddings", "interactions", "texts", "intention_sidecar", "preference_sidecar",
                  "templates", "reviews", "reviews_meta"});
      c.paths.output_dir = get_or<std::string>(p, "output_dir", c.paths.output_dir.string());
      c.paths.embeddings = path_from(p, "embeddings", c.paths.embeddings);
      c.paths.interactions = path_from(p, "interactions", c.paths.interactions);
      c.paths.texts = path_from(p, "texts", c.paths.texts);
      c.paths.intention_sidecar = path_from(p, "intention_sidecar", c.paths.intention_sidecar);
      c.paths.preference_sidecar = path_from(p, "preference_sidecar", c.paths.preference_sidecar);
      c.paths.templates = path_from(p, "templates", c.paths.templates);
      c.paths.reviews = path_from(p, "reviews", c.paths.reviews);
      c.paths.reviews_meta = path_from(p, "reviews_meta", c.paths.reviews_meta);
    }
    // Module seeds follow the top-level seed and index shapes come from the
    // index, so neither is accepted inside a section.
    if (j.contains("synth")) {
      check_keys(j["synth"], "synth",
                 {"n_users", "n_items", "n_clusters", "interactions_per_user", "d_emb", "noise_sigma", "home_fraction",
                  "popularity_exponent"});
      c.synth = synth_config_from_json(j["synth"], c.synth);
    }
    if (j.contains("corpus")) {
      check_keys(j["corpus"], "corpus", {"min_count", "max_len"});
      c.corpus.min_count = get_or(j["corpus"], "min_count", c.corpus.min_count);
      c.corpus.max_len = get_or(j["corpus"], "max_len", c.corpus.max_len);
    }
    if (j.contains("embed")) {
      check_keys(j["embed"], "embed", {"d_emb", "standardize"});
      c.embed.d_emb = get_or(j["embed"], "d_emb", c.embed.d_emb);
      c.embed.standardize = get_or(j["embed"], "standardize", c.embed.standardize);
    }
    if (j.contains("rqvae")) {
      check_keys(j["rqvae"], "rqvae", {"arch", "train"});
      if (j["rqvae"].contains("arch")) {
        Json a = j["rqvae"]["arch"];
        check_keys(a, "rqvae.arch", {"d_code", "hidden", "levels", "codes"});
        a["d_emb"] = 0;
        c.rqvae_arch = arch_from_json(a);
      }
      if (j["rqvae"].contains("train")) {
        check_keys(j["rqvae"]["train"], "rqvae.train",
                   {"beta", "learning_rate", "weight_decay", "batch_size", "epochs", "kmeans_iters", "dead_code_reset"});
        c.rqvae = train_config_from_json(j["rqvae"]["train"], c.rqvae);
      }
    }
    if (j.contains("usm")) {
      check_keys(j["usm"], "usm", {"enabled", "epsilon", "iterations"});
      c.rqvae.usm_enabled = get_or(j["usm"], "enabled", c.rqvae.usm_enabled);
      c.rqvae.sinkhorn_epsilon = get_or(j["usm"], "epsilon", c.rqvae.sinkhorn_epsilon);
      c.rqvae.sinkhorn_iters = get_or(j["usm"], "iterations", c.rqvae.sinkhorn_iters);
    }
    if (j.contains("instruct")) {
      check_keys(j["instruct"], "instruct", {"epochs", "tasks"});
      c.instruct.epochs = get_or(j["instruct"], "epochs", c.instruct.epochs);
      c.instruct.tasks = get_or(j["instruct"], "tasks", c.instruct.tasks);
      for (const auto& t : c.instruct.tasks) task_from_name(t);
    }
    if (j.contains("recgen")) {
      check_keys(j["recgen"], "recgen",
                 {"model", "epochs", "batch", "lr", "weight_decay", "warmup_frac", "init_std", "max_items"});
      if (j["recgen"].contains("model"))
        check_keys(j["recgen"]["model"], "recgen.model", {"layers", "dim", "heads", "max_positions", "ffn_mult"});
      c.recgen = rec_config_from_json(j["recgen"], c.recgen);
    }
    if (j.contains("eval")) {
      check_keys(j["eval"], "eval", {"beam", "ks", "split"});
      c.eval.beam = get_or(j["eval"], "beam", c.eval.beam);
      c.eval.ks = get_or(j["eval"], "ks", c.eval.ks);
      c.eval.split = get_or(j["eval"], "split", c.eval.split);
    }
    c.apply_seed(get_or<std::uint64_t>(j, "seed", c.seed));
  } catch (const SchemaError& e) {
    throw ConfigError(e.what());
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("bad configuration: {}", e.what()));
  }
  if (c.eval.beam < 1) throw ConfigError("eval.beam must be >= 1");
  for (int k : c.eval.ks)
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  split_from_name(c.eval.split);
  if (c.instruct.epochs < 1) throw ConfigError("instruct.epochs must be >= 1");
  if (c.corpus.min_count < 1 || c.corpus.max_len < 3) throw ConfigError("corpus needs min_count >= 1 and max_len >= 3");
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError(fmt::format("config file '{}' does not exist", path.string()));
  Json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& cfg) {
  // The output location does not change any artifact's content.
  Json j = to_json(cfg);
  j["paths"].erase("output_dir");
  return sha256_hex(j.dump());
}

Json artifact_meta(const PipelineConfig& cfg, const std::string& stage) {
  return Json{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"tool_version", kToolVersion}, {"stage", stage}};
}

LooSplit prepare_split(const PipelineConfig& cfg) {
  const auto path = cfg.interactions_path();
  require_input(path, "interactions file");
  const auto filtered = five_core_filter(load_interactions(path), cfg.corpus.min_count);
  return leave_one_out(build_sequences(filtered, cfg.corpus.max_len));
}

IndexMapping assign_index(const RqvaeModel& model, const EmbeddingMatrix& embeddings, ConflictStats* stats) {
  const RowMatrix z = model.encoder.forward(embeddings.data());
  std::vector<RowMatrix> residuals;
  const CodeMatrix greedy = quantize_batch(z, model.codebook, &residuals);
  const int H = model.codebook.levels();
  const CodeMatrix codes =
      resolve_conflicts(greedy, residuals[static_cast<std::size_t>(H - 1)], model.codebook.level(H - 1), stats);
  std::vector<SemanticIndex> indices;
  indices.reserve(static_cast<std::size_t>(codes.rows()));
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    SemanticIndex idx;
    for (int h = 0; h < H; ++h) idx.codes.push_back(codes(i, h));
    indices.push_back(std::move(idx));
  }
  return IndexMapping(H, model.codebook.codes(), embeddings.items(), std::move(indices));
}

StageOutcome run_synth(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "synth";
  const StageStamp stamp(cfg, stage, to_json(cfg.synth), {});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);
  const auto t0 = std::chrono::steady_clock::now();

  const SynthCorpus corpus = synth_corpus(cfg.synth);
  const fs::path dir = cfg.data_dir();
  fs::create_directories(dir);
  StageOutcome out{stage, false, {dir / "interactions.tsv", dir / "items.jsonl", dir / "embeddings.jsonl",
                                  dir / "clusters.tsv", dir / "synth.meta.json"}, Json::object()};
  save_interactions(corpus.interactions, out.outputs[0]);
  save_item_texts(corpus.items, out.outputs[1]);
  save_embeddings(corpus.embeddings, out.outputs[2]);
  {
    std::ofstream cl(out.outputs[3], std::ios::binary);
    cl << "item_id\tcluster\n";
    for (std::size_t i = 0; i < corpus.items.size(); ++i) cl << corpus.items[i].item_id << '\t' << corpus.cluster_of_item[i] << '\n';
  }
  out.summary = {{"users", cfg.synth.n_users},
                 {"items", corpus.items.size()},
                 {"interactions", corpus.interactions.size()},
                 {"clusters", cfg.synth.n_clusters}};
  Json meta = artifact_meta(cfg, stage);
  meta["synth"] = to_json(cfg.synth);
  meta["summary"] = out.summary;
  write_json(out.outputs[4], meta);
  stamp.commit(out.outputs);
  log("synth: {} interactions over {} items written to {} ({:.1f}s)", corpus.interactions.size(), corpus.items.size(),
      dir.string(), seconds_since(t0));
  return out;
}

StageOutcome run_embed_texts(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "embed-texts";
  const auto texts_path = cfg.texts_path();
  require_input(texts_path, "item texts file");
  const StageStamp stamp(cfg, stage, {{"embed", {{"d_emb", cfg.embed.d_emb}, {"seed", cfg.embed.seed}, {"standardize", cfg.embed.standardize}}}},
                         {texts_path});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const auto texts = load_item_texts(texts_path);
  RowMatrix data(static_cast<Eigen::Index>(texts.size()), cfg.embed.d_emb);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    ids.push_back(texts[i].item_id);
    data.row(static_cast<Eigen::Index>(i)) =
        hash_embed(texts[i].title + " " + texts[i].description, cfg.embed.d_emb, cfg.embed.seed).transpose();
  }
  EmbeddingMatrix m(std::move(ids), std::move(data));
  if (cfg.embed.standardize) m = standardize(m);
  const fs::path path = cfg.embeddings_path();
  fs::create_directories(path.parent_path());
  save_embeddings(m, path);
  const fs::path meta_path = path.string() + ".meta.json";
  write_json(meta_path, artifact_meta(cfg, stage));
  stamp.commit({path, meta_path});
  Logger(opts.log)("embed-texts: {} items embedded into {} dimensions", m.size(), m.dim());
  return {stage, false, {path, meta_path}, {{"items", m.size()}, {"d_emb", m.dim()}}};
}

StageOutcome run_convert_reviews(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "convert-reviews";
  if (!cfg.paths.reviews) throw ConfigError("convert-reviews needs paths.reviews (--reviews)");
  require_input(*cfg.paths.reviews, "review dump");
  std::vector<fs::path> inputs{*cfg.paths.reviews};
  if (cfg.paths.reviews_meta) {
    require_input(*cfg.paths.reviews_meta, "metadata dump");
    inputs.push_back(*cfg.paths.reviews_meta);
  }
  const StageStamp stamp(cfg, stage, Json::object(), inputs);
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  StageOutcome out{stage, false, {cfg.interactions_path()}, Json::object()};
  fs::create_directories(cfg.interactions_path().parent_path());
  const auto interactions = convert_amazon_reviews(*cfg.paths.reviews);
  save_interactions(interactions, cfg.interactions_path());
  out.summary["interactions"] = interactions.size();
  if (cfg.paths.reviews_meta) {
    const auto items = convert_amazon_meta(*cfg.paths.reviews_meta);
    fs::create_directories(cfg.texts_path().parent_path());
    save_item_texts(items, cfg.texts_path());
    out.outputs.push_back(cfg.texts_path());
    out.summary["items"] = items.size();
  }
  const fs::path meta_path = cfg.interactions_path().string() + ".meta.json";
  write_json(meta_path, artifact_meta(cfg, stage));
  out.outputs.push_back(meta_path);
  stamp.commit(out.outputs);
  Logger(opts.log)("convert-reviews: {}", out.summary.dump());
  return out;
}

StageOutcome run_index_train(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "index-train";
  const auto emb_path = cfg.embeddings_path();
  require_input(emb_path, "embeddings file");
  const Json stage_cfg = {{"arch", to_json(cfg.rqvae_arch)}, {"train", to_json(cfg.rqvae)}};
  const StageStamp stamp(cfg, stage, stage_cfg, {emb_path});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);
  const auto t0 = std::chrono::steady_clock::now();

  const EmbeddingMatrix emb = load_embeddings(emb_path);
  RqvaeArch arch = cfg.rqvae_arch;
  arch.d_emb = static_cast<int>(emb.dim());
  const int every = std::max(1, cfg.rqvae.epochs / 10);
  const auto trained = train(emb, arch, cfg.rqvae, [&](int epoch, const LossTerms& l) {
    if (epoch % every == 0 || epoch == cfg.rqvae.epochs)
      log("index-train: epoch {:4d} loss {:.6f} (recon {:.6f}, rq {:.6f})", epoch, l.total, l.recon, l.rq);
  });

  StageOutcome out{stage, false, {cfg.rqvae_checkpoint_path(), cfg.paths.output_dir / "rqvae" / "report.json"},
                   Json::object()};
  fs::create_directories(out.outputs[0].parent_path());
  save_checkpoint(trained.model, arch, cfg.rqvae, out.outputs[0], artifact_meta(cfg, stage));
  Json losses = Json::array();
  for (const auto& l : trained.report.epochs) losses.push_back({{"total", l.total}, {"recon", l.recon}, {"rq", l.rq}});
  const auto& init = trained.report.initial;
  const auto& last = trained.report.epochs.empty() ? init : trained.report.epochs.back();
  out.summary = {{"initial_loss", init.total}, {"final_loss", last.total}, {"epochs", trained.report.epochs.size()}};
  write_json(out.outputs[1], {{"meta", artifact_meta(cfg, stage)},
                              {"initial", {{"total", init.total}, {"recon", init.recon}, {"rq", init.rq}}},
                              {"epochs", losses}});
  stamp.commit(out.outputs);
  log("index-train: loss {:.6f} -> {:.6f} ({:.1f}s)", init.total, last.total, seconds_since(t0));
  return out;
}

StageOutcome run_index_assign(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "index-assign";
  const auto emb_path = cfg.embeddings_path();
  require_input(emb_path, "embeddings file");
  require_input(cfg.rqvae_checkpoint_path(), "RQ-VAE checkpoint");
  const StageStamp stamp(cfg, stage, Json::object(), {emb_path, cfg.rqvae_checkpoint_path()});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);
  const auto t0 = std::chrono::steady_clock::now();

  const EmbeddingMatrix emb = load_embeddings(emb_path);
  const RqvaeCheckpoint ck = load_checkpoint(cfg.rqvae_checkpoint_path());
  ConflictStats stats;
  const IndexMapping mapping = assign_index(ck.model, emb, &stats);

  Json hist = Json::object();
  for (const auto& [size, count] : stats.size_histogram) hist[std::to_string(size)] = count;
  std::set<SemanticIndex> distinct(mapping.indices().begin(), mapping.indices().end());
  StageOutcome out{stage, false, {cfg.index_path(), index_meta_path(cfg.index_path()),
                                  cfg.paths.output_dir / "index" / "conflicts.json"}, Json::object()};
  out.summary = {{"items", mapping.size()},
                 {"distinct_indices", distinct.size()},
                 {"conflict_groups", stats.groups},
                 {"conflicting_items", stats.conflicting_items},
                 {"reassigned_items", stats.reassigned_items},
                 {"group_sizes", hist}};
  fs::create_directories(cfg.index_path().parent_path());
  save_index(mapping, cfg.index_path(), artifact_meta(cfg, stage));
  write_json(out.outputs[2], {{"meta", artifact_meta(cfg, stage)}, {"stats", out.summary}});
  stamp.commit(out.outputs);
  log("index-assign: {} items, {} conflict groups ({} items), {} reassigned, sizes {}, {} distinct indices ({:.1f}s)",
      mapping.size(), stats.groups, stats.conflicting_items, stats.reassigned_items, hist.dump(), distinct.size(),
      seconds_since(t0));
  return out;
}

StageOutcome run_instruct_gen(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "instruct-gen";
  std::vector<fs::path> inputs{cfg.interactions_path(), cfg.texts_path(), cfg.index_path()};
  require_input(inputs[0], "interactions file");
  require_input(inputs[1], "item texts file");
  require_input(inputs[2], "index file");
  for (const auto& p : {cfg.paths.intention_sidecar, cfg.paths.preference_sidecar, cfg.paths.templates})
    if (p) {
      require_input(*p, "input file");
      inputs.push_back(*p);
    }
  const Json stage_cfg = {{"instruct", {{"epochs", cfg.instruct.epochs}, {"seed", cfg.instruct.seed}, {"tasks", cfg.instruct.tasks}}},
                          {"corpus", {{"min_count", cfg.corpus.min_count}, {"max_len", cfg.corpus.max_len}}}};
  const StageStamp stamp(cfg, stage, stage_cfg, inputs);
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);

  const LooSplit split = prepare_split(cfg);
  const IndexMapping mapping = load_index(cfg.index_path());
  const IndexTrie trie = IndexTrie::build(mapping);
  const auto texts_vec = load_item_texts(cfg.texts_path());
  const ItemTextIndex texts(texts_vec);
  const TemplateBank bank = cfg.paths.templates ? TemplateBank::from_json(read_json(*cfg.paths.templates))
                                                : TemplateBank::builtin();
  const auto intentions = cfg.paths.intention_sidecar
                              ? load_sidecar(*cfg.paths.intention_sidecar, "item_id", "intention")
                              : std::unordered_map<std::string, std::string>{};
  const auto preferences = cfg.paths.preference_sidecar
                               ? load_sidecar(*cfg.paths.preference_sidecar, "user_id", "preference")
                               : std::unordered_map<std::string, std::string>{};
  std::set<TaskFamily> wanted;
  for (const auto& t : cfg.instruct.tasks) wanted.insert(task_from_name(t));
  auto keep = [&](TaskFamily t) { return wanted.empty() || wanted.count(t) > 0; };

  // Items that survive filtering, for the mutual-alignment data.
  std::set<std::string> active;
  for (const auto& u : split.users) {
    active.insert(u.train_items.begin(), u.train_items.end());
    active.insert(u.valid_target);
    active.insert(u.test_target);
  }
  std::vector<ItemText> active_texts;
  for (const auto& t : texts_vec)
    if (active.count(t.item_id)) active_texts.push_back(t);

  StageOutcome out{stage, false, {}, Json::object()};
  Json manifest_files = Json::array();
  Json counts = Json::object();
  for (SplitKind kind : {SplitKind::kTrain, SplitKind::kValid, SplitKind::kTest}) {
    const auto examples = make_examples(split, kind);
    std::vector<InstructionDatum> data;
    auto add = [&](std::vector<InstructionDatum> more) {
      for (auto& d : more)
        if (keep(d.task)) data.push_back(std::move(d));
    };
    add(gen_seq(examples, mapping));
    if (kind == SplitKind::kTrain) add(gen_mutual(active_texts, mapping));
    add(gen_asymmetric(examples, mapping, texts));
    add(gen_intention(examples, mapping, texts, intentions));
    add(gen_preference(examples, mapping, texts, preferences));
    canonical_sort(data);
    counts[std::string(split_name(kind))] = data.size();
    for (int epoch = 1; epoch <= cfg.instruct.epochs; ++epoch) {
      const auto sampled = epoch_sample(data, bank, epoch, cfg.instruct.seed);
      for (const auto& ex : sampled) {
        validate_index_tokens(ex.instruction, trie);
        validate_index_tokens(ex.response, trie);
      }
      const fs::path dir = cfg.instruct_dir() / fmt::format("epoch_{}", epoch) / std::string(split_name(kind));
      for (const auto& p : write_examples(sampled, dir)) {
        out.outputs.push_back(p);
        manifest_files.push_back({{"path", fs::relative(p, cfg.instruct_dir()).generic_string()}, {"sha256", file_sha256(p)}});
      }
    }
  }
  const fs::path manifest = cfg.instruct_dir() / "manifest.json";
  write_json(manifest, {{"meta", artifact_meta(cfg, stage)}, {"epochs", cfg.instruct.epochs}, {"data_per_epoch", counts},
                        {"files", manifest_files}});
  out.outputs.push_back(manifest);
  out.summary = {{"data_per_epoch", counts}, {"files", out.outputs.size()}};
  stamp.commit(out.outputs);
  log("instruct-gen: {} per epoch, {} files under {}", counts.dump(), out.outputs.size(), cfg.instruct_dir().string());
  return out;
}

StageOutcome run_rec_train(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "rec-train";
  require_input(cfg.interactions_path(), "interactions file");
  require_input(cfg.index_path(), "index file");
  const Json stage_cfg = {{"recgen", to_json(cfg.recgen)},
                          {"corpus", {{"min_count", cfg.corpus.min_count}, {"max_len", cfg.corpus.max_len}}}};
  const StageStamp stamp(cfg, stage, stage_cfg, {cfg.interactions_path(), cfg.index_path()});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);
  const auto t0 = std::chrono::steady_clock::now();

  const LooSplit split = prepare_split(cfg);
  const IndexMapping mapping = load_index(cfg.index_path());
  log("rec-train: {} users, vocabulary {} tokens", split.users.size(), TokenVocab(mapping.levels(), mapping.codes()).size());
  const auto trained = train_recgen(split, mapping, cfg.recgen, [&](int epoch, double tr, double va) {
    log("rec-train: epoch {:3d} train nll {:.5f} valid nll {:.5f} ({:.0f}s)", epoch, tr, va, seconds_since(t0));
  });

  StageOutcome out{stage, false, {cfg.recgen_model_path(), cfg.paths.output_dir / "recgen" / "report.json"},
                   Json::object()};
  fs::create_directories(out.outputs[0].parent_path());
  save_seq_model(trained.model, out.outputs[0], artifact_meta(cfg, stage));
  out.summary = {{"train_nll", trained.report.train_nll}, {"valid_nll", trained.report.valid_nll}};
  write_json(out.outputs[1], {{"meta", artifact_meta(cfg, stage)}, {"report", out.summary}});
  stamp.commit(out.outputs);
  log("rec-train: done ({:.1f}s)", seconds_since(t0));
  return out;
}

StageOutcome run_rec_eval(const PipelineConfig& cfg, const RunOptions& opts) {
  const std::string stage = "rec-eval";
  require_input(cfg.interactions_path(), "interactions file");
  require_input(cfg.index_path(), "index file");
  require_input(cfg.recgen_model_path(), "recgen model");
  const Json stage_cfg = {{"eval", {{"beam", cfg.eval.beam}, {"ks", cfg.eval.ks}, {"split", cfg.eval.split}}},
                          {"max_items", cfg.recgen.max_items},
                          {"corpus", {{"min_count", cfg.corpus.min_count}, {"max_len", cfg.corpus.max_len}}}};
  const StageStamp stamp(cfg, stage, stage_cfg, {cfg.interactions_path(), cfg.index_path(), cfg.recgen_model_path()});
  if (auto s = skip_if_fresh(stamp, stage, opts)) return *s;
  const Logger log(opts.log);
  const auto t0 = std::chrono::steady_clock::now();

  const SplitKind kind = split_from_name(cfg.eval.split);
  const LooSplit split = prepare_split(cfg);
  const IndexMapping mapping = load_index(cfg.index_path());
  const IndexTrie trie = IndexTrie::build(mapping);
  const SeqModel model = load_seq_model(cfg.recgen_model_path());
  const auto rows = recommend(model, split, kind, mapping, trie, cfg.eval.beam, cfg.recgen.max_items);

  // Every emitted item must map back to a trie leaf.
  std::size_t valid = 0;
  for (const auto& r : rows)
    if (const auto* idx = mapping.find(r.item_id); idx && trie.contains(*idx)) ++valid;
  if (valid != rows.size()) throw GenerationError("beam search emitted an index outside the trie");

  const auto preds = group_predictions(rows, split_truth(split, kind));
  Json metrics = metrics_report(preds, cfg.eval.ks);
  std::set<std::string> catalog;
  for (const auto& u : split.users) {
    catalog.insert(u.train_items.begin(), u.train_items.end());
    catalog.insert(u.valid_target);
    catalog.insert(u.test_target);
  }
  Json baseline = Json::object();
  for (int k : cfg.eval.ks)
    baseline[fmt::format("HR@{}", k)] = std::min(1.0, static_cast<double>(k) / static_cast<double>(mapping.size()));

  StageOutcome out{stage, false, {cfg.predictions_path(), cfg.predictions_path().string() + ".meta.json", cfg.metrics_path()},
                   Json::object()};
  fs::create_directories(out.outputs[0].parent_path());
  save_predictions(rows, out.outputs[0]);
  write_json(out.outputs[1], artifact_meta(cfg, stage));
  out.summary = {{"split", cfg.eval.split},
                 {"beam", cfg.eval.beam},
                 {"users", preds.size()},
                 {"items", mapping.size()},
                 {"active_items", catalog.size()},
                 {"predictions", rows.size()},
                 {"trie_valid_fraction", rows.empty() ? 1.0 : static_cast<double>(valid) / static_cast<double>(rows.size())},
                 {"metrics", metrics},
                 {"random_baseline", baseline}};
  write_json(out.outputs[2], {{"meta", artifact_meta(cfg, stage)}, {"report", out.summary}});
  stamp.commit(out.outputs);
  log("rec-eval: {} ({:.1f}s)", metrics.dump(), seconds_since(t0));
  return out;
}

}  // namespace semrec
