// SPDX-License-Identifier: Apache-2.0
#include "semrec/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include "semrec/errors.hpp"

namespace semrec {

std::vector<Interaction> five_core_filter(const std::vector<Interaction>& interactions, int min_count) {
  std::vector<char> alive(interactions.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_count, item_count;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      ++user_count[interactions[i].user_id];
      ++item_count[interactions[i].item_id];
    }
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      if (user_count[interactions[i].user_id] < min_count || item_count[interactions[i].item_id] < min_count) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  std::vector<Interaction> out;
  for (std::size_t i = 0; i < interactions.size(); ++i)
    if (alive[i]) out.push_back(interactions[i]);
  if (out.empty() && !interactions.empty())
    std::cerr << "warning: " << min_count << "-core filtering removed every interaction\n";
  return out;
}

std::vector<UserSequence> build_sequences(const std::vector<Interaction>& interactions, int max_len) {
  if (max_len < 1) throw DomainError("max_len must be positive");
  std::map<std::string, std::vector<const Interaction*>> by_user;
  for (const auto& it : interactions) by_user[it.user_id].push_back(&it);
  std::vector<UserSequence> out;
  out.reserve(by_user.size());
  for (auto& [user, list] : by_user) {
    std::sort(list.begin(), list.end(), [](const Interaction* a, const Interaction* b) {
      if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
      return a->item_id < b->item_id;
    });
    UserSequence seq{user, {}};
    const std::size_t start = list.size() > static_cast<std::size_t>(max_len) ? list.size() - max_len : 0;
    for (std::size_t i = start; i < list.size(); ++i) seq.items.push_back(list[i]->item_id);
    out.push_back(std::move(seq));
  }
  return out;
}

LooSplit leave_one_out(const std::vector<UserSequence>& sequences) {
  LooSplit split;
  for (const auto& seq : sequences) {
    const std::size_t n = seq.items.size();
    if (n < 3) continue;
    UserSplit u;
    u.user_id = seq.user_id;
    u.train_items.assign(seq.items.begin(), seq.items.end() - 2);
    u.valid_target = seq.items[n - 2];
    u.test_target = seq.items[n - 1];
    split.users.push_back(std::move(u));
  }
  std::sort(split.users.begin(), split.users.end(),
            [](const UserSplit& a, const UserSplit& b) { return a.user_id < b.user_id; });
  return split;
}

namespace {

constexpr const char* kAdjectives[] = {"Classic", "Compact",  "Deluxe",   "Vintage", "Portable", "Premium",
                                       "Modern",  "Handmade", "Wireless", "Studio",  "Travel",   "Pro"};
constexpr const char* kThemes[] = {"Guitar",  "Drum",    "Piano",   "Violin",  "Paint",   "Canvas",  "Yarn",
                                   "Sewing",  "Racing",  "Puzzle",  "Shooter", "Console", "Headset", "Brush",
                                   "Ukulele", "Trumpet", "Quilt",   "Sketch",  "Arcade",  "Strategy"};
constexpr const char* kNouns[] = {"Kit",  "Set",    "Bundle", "Edition", "Pack",   "Stand",
                                  "Case", "Adapter", "Guide", "Collection", "Starter", "Tuner"};
constexpr const char* kUses[] = {"beginners", "live performance", "everyday practice", "weekend projects",
                                 "collectors", "family evenings", "studio sessions", "gifting"};

template <std::size_t N>
const char* pick(const char* const (&arr)[N], std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, N - 1);
  return arr[d(rng)];
}

std::string padded(char prefix, int value, int total) {
  const int width = static_cast<int>(std::to_string(std::max(total - 1, 0)).size());
  return fmt::format("{}{:0{}d}", prefix, value, width);
}

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_clusters < 1 || cfg.n_items < cfg.n_clusters)
    throw ConfigError("synth needs 1 <= n_clusters <= n_items");
  if (cfg.d_emb < cfg.n_clusters) throw ConfigError("synth needs d_emb >= n_clusters for separated centroids");
  if (cfg.n_users < 0 || cfg.interactions_per_user < 0) throw ConfigError("synth counts must be non-negative");

  std::mt19937_64 rng(cfg.seed);
  SynthCorpus out;

  for (int c = 0; c < cfg.n_clusters; ++c) {
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(cfg.d_emb);
    centroid[c] = std::sqrt(0.5);
    out.centroids.push_back(std::move(centroid));
  }

  // Round-robin cluster labels, then shuffled, so cluster sizes differ by at most one.
  std::vector<int> labels(static_cast<std::size_t>(cfg.n_items));
  for (int i = 0; i < cfg.n_items; ++i) labels[static_cast<std::size_t>(i)] = i % cfg.n_clusters;
  std::shuffle(labels.begin(), labels.end(), rng);
  out.cluster_of_item = labels;

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  std::vector<std::string> ids;
  RowMatrix emb(cfg.n_items, cfg.d_emb);
  for (int i = 0; i < cfg.n_items; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const std::string id = padded('i', i, cfg.n_items);
    ids.push_back(id);
    for (int j = 0; j < cfg.d_emb; ++j) emb(i, j) = out.centroids[static_cast<std::size_t>(c)][j] + noise(rng);
    const char* theme = kThemes[c % std::size(kThemes)];
    ItemText text;
    text.item_id = id;
    text.title = fmt::format("{} {} {} {}", pick(kAdjectives, rng), theme, pick(kNouns, rng), i);
    text.description = fmt::format("A {} {} {} designed for {}. Part of collection {}.",
                                   pick(kAdjectives, rng), theme, pick(kNouns, rng),
                                   pick(kUses, rng), c);
    out.items.push_back(std::move(text));
  }
  out.embeddings = EmbeddingMatrix(ids, std::move(emb));

  // Members of each cluster, with Zipf popularity weights in member order.
  std::vector<std::vector<int>> members(static_cast<std::size_t>(cfg.n_clusters));
  for (int i = 0; i < cfg.n_items; ++i) members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<std::vector<double>> weights(members.size());
  for (std::size_t c = 0; c < members.size(); ++c)
    for (std::size_t r = 0; r < members[c].size(); ++r)
      weights[c].push_back(std::pow(static_cast<double>(r + 1), -cfg.popularity_exponent));

  std::uniform_int_distribution<int> cluster_dist(0, cfg.n_clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> jitter(0, 3599);
  for (int u = 0; u < cfg.n_users; ++u) {
    const std::string user = padded('u', u, cfg.n_users);
    const int home = cluster_dist(rng);
    const std::int64_t base = 1'500'000'000 + static_cast<std::int64_t>(u) * 7;
    std::vector<char> seen(static_cast<std::size_t>(cfg.n_items), 0);
    for (int j = 0; j < cfg.interactions_per_user; ++j) {
      int c = home;
      if (cfg.n_clusters > 1 && unit(rng) >= cfg.home_fraction) {
        std::uniform_int_distribution<int> other(0, cfg.n_clusters - 2);
        c = other(rng);
        if (c >= home) ++c;
      }
      const auto& m = members[static_cast<std::size_t>(c)];
      std::vector<double> w = weights[static_cast<std::size_t>(c)];
      bool any_unseen = false;
      for (std::size_t r = 0; r < m.size(); ++r) {
        if (seen[static_cast<std::size_t>(m[r])]) w[r] = 0.0;
        else any_unseen = true;
      }
      if (!any_unseen) w = weights[static_cast<std::size_t>(c)];
      std::discrete_distribution<std::size_t> item_dist(w.begin(), w.end());
      const int item = m[item_dist(rng)];
      seen[static_cast<std::size_t>(item)] = 1;
      out.interactions.push_back({user, ids[static_cast<std::size_t>(item)], base + j * 86'400 + jitter(rng)});
    }
  }
  return out;
}

Json to_json(const SynthConfig& c) {
  return Json{{"n_users", c.n_users},
              {"n_items", c.n_items},
              {"n_clusters", c.n_clusters},
              {"interactions_per_user", c.interactions_per_user},
              {"d_emb", c.d_emb},
              {"noise_sigma", c.noise_sigma},
              {"home_fraction", c.home_fraction},
              {"popularity_exponent", c.popularity_exponent},
              {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const Json& j, SynthConfig c) {
  c.n_users = j.value("n_users", c.n_users);
  c.n_items = j.value("n_items", c.n_items);
  c.n_clusters = j.value("n_clusters", c.n_clusters);
  c.interactions_per_user = j.value("interactions_per_user", c.interactions_per_user);
  c.d_emb = j.value("d_emb", c.d_emb);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.home_fraction = j.value("home_fraction", c.home_fraction);
  c.popularity_exponent = j.value("popularity_exponent", c.popularity_exponent);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<Interaction> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open interactions file '{}'", path.string()));
  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw ParseError("expected user_id<TAB>item_id<TAB>timestamp", line_no);
    Interaction it{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0};
    const char* first = line.data() + t2 + 1;
    const char* last = line.data() + line.size();
    const auto res = std::from_chars(first, last, it.timestamp);
    if (res.ec != std::errc() || res.ptr != last) throw ParseError("timestamp is not an integer", line_no);
    if (it.timestamp < 0) throw SchemaError("negative timestamp", line_no);
    if (it.user_id.empty() || it.item_id.empty()) throw SchemaError("empty user or item id", line_no);
    out.push_back(std::move(it));
  }
  return out;
}

void save_interactions(const std::vector<Interaction>& interactions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  for (const auto& it : interactions) out << it.user_id << '\t' << it.item_id << '\t' << it.timestamp << '\n';
}

std::vector<ItemText> load_item_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open item text file '{}'", path.string()));
  std::vector<ItemText> out;
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
    if (!j.is_object() || !j.contains("item_id") || !j["item_id"].is_string())
      throw SchemaError("item text record needs a string item_id", line_no);
    ItemText t;
    t.item_id = j["item_id"].get<std::string>();
    t.title = j.value("title", "");
    t.description = j.value("description", "");
    out.push_back(std::move(t));
  }
  return out;
}

void save_item_texts(const std::vector<ItemText>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  for (const auto& t : items)
    out << Json{{"item_id", t.item_id}, {"title", t.title}, {"description", t.description}}.dump() << '\n';
}

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(Json::parse(line), line_no);
    } catch (const Json::parse_error& e) {
      throw ParseError(e.what(), line_no, e.byte);
    }
  }
}

}  // namespace

std::vector<Interaction> convert_amazon_reviews(const std::filesystem::path& reviews) {
  std::vector<Interaction> out;
  for_each_json_line(reviews, [&](const Json& j, std::size_t line_no) {
    if (!j.contains("reviewerID") || !j.contains("asin") || !j.contains("unixReviewTime"))
      throw SchemaError("review needs reviewerID, asin and unixReviewTime", line_no);
    out.push_back({j["reviewerID"].get<std::string>(), j["asin"].get<std::string>(),
                   j["unixReviewTime"].get<std::int64_t>()});
  });
  return out;
}

std::vector<ItemText> convert_amazon_meta(const std::filesystem::path& meta) {
  std::vector<ItemText> out;
  for_each_json_line(meta, [&](const Json& j, std::size_t line_no) {
    if (!j.contains("asin")) throw SchemaError("metadata record needs asin", line_no);
    ItemText t;
    t.item_id = j["asin"].get<std::string>();
    t.title = j.value("title", "");
    if (j.contains("description")) {
      const auto& d = j["description"];
      if (d.is_string()) {
        t.description = d.get<std::string>();
      } else if (d.is_array()) {
        for (const auto& part : d) {
          if (!part.is_string()) continue;
          if (!t.description.empty()) t.description += ' ';
          t.description += part.get<std::string>();
        }
      }
    }
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace semrec
