// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semrec/embed.hpp"
#include "semrec/json.hpp"

namespace semrec {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;  // seconds, >= 0

  bool operator==(const Interaction&) const = default;
};

struct UserSequence {
  std::string user_id;
  std::vector<std::string> items;  // oldest first

  bool operator==(const UserSequence&) const = default;
};

struct UserSplit {
  std::string user_id;
  std::vector<std::string> train_items;
  std::string valid_target;
  std::string test_target;
};

/// Leave-one-out split; one entry per retained user, ordered by user_id.
struct LooSplit {
  std::vector<UserSplit> users;
};

struct ItemText {
  std::string item_id;
  std::string title;
  std::string description;

  bool operator==(const ItemText&) const = default;
};

/// Drops users and items with fewer than `min_count` interactions, repeated
/// until nothing changes. Input order of the survivors is kept.
std::vector<Interaction> five_core_filter(const std::vector<Interaction>& interactions, int min_count = 5);

/// Per user, items ordered by (timestamp, item_id), keeping the most recent
/// `max_len`. Output ordered by user_id.
std::vector<UserSequence> build_sequences(const std::vector<Interaction>& interactions, int max_len = 20);

/// Last item -> test, second to last -> validation, the rest -> train.
/// Users with fewer than three items are left out.
LooSplit leave_one_out(const std::vector<UserSequence>& sequences);

struct SynthConfig {
  int n_users = 2500;
  int n_items = 1000;
  int n_clusters = 20;
  int interactions_per_user = 20;
  int d_emb = 64;
  double noise_sigma = 0.1;
  double home_fraction = 0.8;
  /// Zipf exponent of within-cluster item popularity (0 = uniform).
  double popularity_exponent = 1.0;
  std::uint64_t seed = 42;
};

struct SynthCorpus {
  std::vector<Interaction> interactions;
  std::vector<ItemText> items;
  EmbeddingMatrix embeddings;
  std::vector<int> cluster_of_item;  // aligned with items
  std::vector<Eigen::VectorXd> centroids;
};

/// Items split into clusters with centroids sqrt(1/2) * e_c (pairwise distance
/// 1) and Gaussian noise. Each user picks a home cluster and draws
/// `home_fraction` of interactions from it. Fully determined by the seed.
SynthCorpus synth_corpus(const SynthConfig& cfg);

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& j, SynthConfig defaults = {});

/// TSV `user_id \t item_id \t timestamp`, no header.
std::vector<Interaction> load_interactions(const std::filesystem::path& path);
void save_interactions(const std::vector<Interaction>& interactions, const std::filesystem::path& path);

/// JSON Lines `{item_id, title, description}`.
std::vector<ItemText> load_item_texts(const std::filesystem::path& path);
void save_item_texts(const std::vector<ItemText>& items, const std::filesystem::path& path);

/// Amazon review dump (`reviewerID`, `asin`, `unixReviewTime` per line).
std::vector<Interaction> convert_amazon_reviews(const std::filesystem::path& reviews);
/// Amazon metadata dump (`asin`, `title`, `description` string or list).
std::vector<ItemText> convert_amazon_meta(const std::filesystem::path& meta);

}  // namespace semrec
