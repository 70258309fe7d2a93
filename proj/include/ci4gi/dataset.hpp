#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ci4gi/tensor.hpp"

namespace ci4gi {

using RawId = std::int64_t;
using Edge = std::pair<RawId, RawId>;

enum class Split { Train, Validation, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// Contiguous internal ids for arbitrary raw ids, assigned in ascending raw order.
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<RawId> raw_ids);  // sorted + deduplicated internally
  static IdMap identity(std::size_t n);

  std::size_t size() const noexcept { return raw_.size(); }
  RawId raw(std::size_t internal) const { return raw_.at(internal); }
  std::optional<std::size_t> find(RawId raw) const;
  std::size_t at(RawId raw) const;
  const std::vector<RawId>& raw_ids() const noexcept { return raw_; }

 private:
  std::vector<RawId> raw_;
  std::unordered_map<RawId, std::size_t> index_;
};

/// The three interaction relations with the user-group relation split three ways.
/// Stored values are all 1.
struct InteractionDataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_groups = 0;
  SparseMatrix user_item;   // n_users x n_items
  SparseMatrix group_item;  // n_groups x n_items
  SparseMatrix train;       // n_users x n_groups
  SparseMatrix validation;
  SparseMatrix test;
  IdMap users;
  IdMap items;
  IdMap groups;
  std::size_t dropped_heldout = 0;  // held-out pairs of users unseen in training

  const SparseMatrix& split(Split s) const;
  std::size_t n_memberships() const { return train.nnz() + validation.nnz() + test.nnz(); }

  // Throws InvalidDatasetError when an invariant is broken.
  void validate() const;
};

std::vector<Edge> read_edge_list(const std::filesystem::path& path);
void write_edge_list(const std::filesystem::path& path, const std::vector<Edge>& edges);

/// Reindexes raw ids and splits user-group pairs into train/validation/test with
/// sizes n - floor(n/10) - floor(n/5), floor(n/10), floor(n/5) after a seeded shuffle.
InteractionDataset build_dataset(const std::vector<Edge>& user_item, const std::vector<Edge>& group_item,
                                 const std::vector<Edge>& user_group, std::uint64_t seed);

InteractionDataset load_dataset(const std::filesystem::path& user_item_path,
                                const std::filesystem::path& group_item_path,
                                const std::filesystem::path& user_group_path, std::uint64_t seed);

struct Triple {
  std::size_t user;
  std::size_t positive;
  std::size_t negative;
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct TripletBatch {
  std::vector<Triple> triples;
  std::size_t skipped = 0;  // draws whose user belongs to every group
};

/// Draws (user, joined group, unjoined group) training triples. The negative is
/// uniform over groups with no membership for that user in any split.
class TripletSampler {
 public:
  explicit TripletSampler(const InteractionDataset& ds);

  TripletBatch sample(std::size_t batch_size, std::mt19937_64& rng) const;
  std::size_t n_positives() const noexcept { return positives_.size(); }
  bool observed(std::size_t user, std::size_t group) const;

 private:
  std::size_t n_groups_;
  std::vector<std::pair<std::size_t, std::size_t>> positives_;
  std::vector<std::vector<std::size_t>> observed_;  // sorted, per user
};

TripletBatch sample_triplets(const InteractionDataset& ds, std::size_t batch_size, std::mt19937_64& rng);

/// Keeps at most k training memberships per user, chosen uniformly at random.
InteractionDataset cap_memberships(const InteractionDataset& ds, std::size_t k, std::mt19937_64& rng);

struct SyntheticParams {
  std::size_t n_users = 200;
  std::size_t n_items = 100;
  std::size_t n_groups = 40;
  std::size_t n_topics = 4;
  double density = 0.05;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  InteractionDataset data;
  std::vector<std::size_t> user_topic;
  std::vector<std::size_t> item_topic;
  std::vector<std::size_t> group_topic;
  std::vector<Edge> user_item_edges;
  std::vector<Edge> group_item_edges;
  std::vector<Edge> user_group_edges;
};

/// Planted-topic generator: every entity gets one topic; a pair interacts with
/// probability p_in inside a topic and p_in / 20 across topics, p_in chosen so
/// the expected density of each relation matches `density`.
SyntheticDataset generate_synthetic(const SyntheticParams& params);

struct DatasetStats {
  std::size_t n_users, n_items, n_groups;
  std::size_t user_group, user_item, group_item;
  std::size_t train, validation, test;
};
DatasetStats dataset_stats(const InteractionDataset& ds);
std::string format_stats(const DatasetStats& stats, std::string_view name);

// Held-out split as raw-id edge list (user, group).
std::vector<Edge> split_edges(const InteractionDataset& ds, Split s);

/// JSON manifest naming the three edge-list files and the split seed.
struct DatasetManifest {
  std::filesystem::path user_item;
  std::filesystem::path group_item;
  std::filesystem::path user_group;
  std::uint64_t seed = 0;
  std::optional<std::size_t> coldstart_k;
  std::optional<DatasetStats> stats;
  std::vector<std::filesystem::path> split_files;  // train, validation, test
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
// Loads the files named by the manifest and applies its cold-start cap.
InteractionDataset load_from_manifest(const DatasetManifest& manifest);

}  // namespace ci4gi
