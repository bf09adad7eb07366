#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ccrec/error.hpp"
#include "ccrec/layers.hpp"

namespace ccrec::data {

struct Interaction {
  std::string user, item, category;
  int64_t ts = 0;

  bool operator==(const Interaction&) const = default;
};

struct IngestStats {
  size_t rows_read = 0;
  size_t malformed = 0;
  size_t unmapped = 0;  // events whose item has no category mapping
};

// Canonical interaction file: TSV user_id, item_id, category_id, timestamp
// (unix seconds), no header.
std::vector<Interaction> ingest_canonical(const std::string& path, IngestStats& stats);

// Events CSV (timestamp ms, visitorid, event, itemid, transactionid) joined
// with item-property CSVs; the latest "categoryid" property per item wins.
std::vector<Interaction> ingest_retailrocket(const std::string& events_path,
                                             const std::vector<std::string>& property_paths,
                                             IngestStats& stats);

struct TmallColumns {
  std::string user = "user_id";
  std::string item = "item_id";
  std::string category = "cat_id";
  std::string time = "time_stamp";
};

std::vector<Interaction> ingest_tmall(const std::string& path, const TmallColumns& cols,
                                      IngestStats& stats);

// Stable sort by (user_id, timestamp).
void sort_interactions(std::vector<Interaction>& rows);

void write_canonical(const std::string& path, const std::vector<Interaction>& rows);

// One burst of same-category activity: every member event falls within
// window_days of the first one.
struct RawGroup {
  std::string category;
  int64_t window_start = 0;
  std::vector<std::string> items;
  std::vector<int64_t> ts;

  bool operator==(const RawGroup&) const = default;
};

// Greedy windowing of one user's time-sorted events: an event joins the open
// group of its category if event.ts - window_start <= window_days * 86400,
// else it starts a new group anchored at its own timestamp. Groups are
// returned ordered by (window_start, category).
std::vector<RawGroup> group_events(const std::vector<Interaction>& events,
                                   double window_days);

std::map<std::string, std::vector<RawGroup>> group_all(
    const std::vector<Interaction>& sorted_rows, double window_days);

enum class SplitKind { Cutoff, LeaveLast };
enum class CapUnit { Groups, Events };

struct SplitPolicy {
  SplitKind kind = SplitKind::LeaveLast;
  int64_t cutoff_ts = 0;  // Cutoff: events with ts <= cutoff are past
  size_t leave_n = 1;     // LeaveLast: number of trailing groups held out
  size_t max_past = 0;    // 0 = unlimited; keeps the most recent
  size_t max_future = 0;  // 0 = unlimited; keeps the earliest
  CapUnit cap_unit = CapUnit::Groups;
  double holdout_fraction = 0.0;  // >0: user-level train/test disjointness
  uint64_t holdout_seed = 0;
  double window_days = 5.0;
};

struct RawExample {
  std::string user;
  std::vector<RawGroup> past, future;
  int64_t max_past_ts = 0;
  int64_t min_future_ts = 0;
};

struct SplitStats {
  size_t users_total = 0;
  size_t users_dropped_no_past = 0;
  size_t users_dropped_no_future = 0;
  size_t leakage_violations = 0;
  bool audit_ok = true;
};

struct SplitResult {
  std::vector<RawExample> train, test;
  SplitStats stats;
};

// Splits each user's events into past/future at a cutoff (LeaveLast derives
// a per-user cutoff just before the first held-out group's window), groups
// each side independently, applies caps, drops users lacking either side,
// and audits that every kept past timestamp precedes every future one.
// With holdout_fraction = 0 every surviving user lands in both splits;
// otherwise train and test users are disjoint.
SplitResult split_examples(const std::vector<Interaction>& sorted_rows,
                           const SplitPolicy& policy);

struct Vocabulary {
  std::map<std::string, int32_t> category_index;  // dense, 1-based
  size_t hash_dim = 512;

  size_t num_categories() const { return category_index.size(); }
  int32_t index_of(const std::string& category) const {
    auto it = category_index.find(category);
    return it == category_index.end() ? 0 : it->second;
  }
};

// Indices assigned lexicographically over the categories present in the
// training split (past and future), starting at 1; 0 is reserved for PAD.
Vocabulary build_vocab(const std::vector<RawExample>& train, size_t hash_dim);

void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

// Hashed occurrence counts: bucket = fnv1a64(item_id) % hash_dim; returned
// as (bucket, count) pairs sorted by bucket.
std::vector<std::pair<uint32_t, uint32_t>> build_item_profile(
    const std::vector<std::string>& items, size_t hash_dim);

struct GroupRecord {
  int32_t category = 0;
  int64_t window_start = 0;
  std::vector<std::pair<uint32_t, uint32_t>> profile_nonzeros;

  bool operator==(const GroupRecord&) const = default;
};

struct UserExample {
  std::string user;
  std::vector<double> f;
  std::vector<int32_t> delta;       // past categories in time order; 0 = unknown
  std::vector<GroupRecord> groups;  // known-category past groups, time order
  std::vector<int32_t> gamma;       // deduplicated future categories, ascending

  bool operator==(const UserExample&) const = default;
};

struct CanonStats {
  size_t unknown_past = 0;
  size_t unknown_future = 0;
  size_t dropped_no_known_past = 0;
  size_t dropped_empty_gamma = 0;
};

// Maps category ids through the vocabulary. Unknown past categories keep a
// masked 0 in delta but contribute no group record; unknown future
// categories are excluded from gamma. Examples left without any known past
// category or with an empty gamma are dropped.
std::vector<UserExample> canonicalize(const std::vector<RawExample>& raw,
                                      const Vocabulary& vocab, CanonStats& stats);

// One JSON object per line: {user, f, delta, groups, gamma}.
void write_examples(const std::string& path, const std::vector<UserExample>& examples);
std::vector<UserExample> read_examples(const std::string& path);

// Truncates each delta to its most recent k entries, left-pads with 0 and
// masks only real (nonzero) positions.
nn::SeqBatch encode_window(const std::vector<UserExample>& examples, size_t first,
                           size_t count, size_t k);

// 64-bit mix used for holdout assignment (splitmix64 finalizer).
uint64_t mix64(uint64_t x);

}  // namespace ccrec::data
