#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccrec/data.hpp"

namespace ccrec::synth {

// Synthetic interaction corpus. The "disambiguation" scenario builds user
// archetypes whose observable category histories are identically
// distributed while their item choices live in disjoint per-category
// clusters, so the next category is predictable from items but not from the
// category sequence alone. "chain" walks a deterministic cycle; "uniform"
// draws every transition uniformly.
struct SyntheticSpec {
  size_t num_users = 2000;
  size_t num_categories = 8;
  size_t num_archetypes = 2;
  size_t items_per_category = 40;
  size_t past_groups = 1;   // category-groups per user before the cutoff
  size_t future_steps = 1;  // groups after the cutoff
  size_t min_items_per_group = 2;
  size_t max_items_per_group = 4;
  double outcome_prob = 0.70;  // disambiguation: mass on the archetype's outcome
  double popular_prob = 0.25;  // disambiguation: mass on the shared popular category
  std::string scenario = "disambiguation";
  uint64_t seed = 1;
  int64_t cutoff_ts = 1700000000;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;

  // Disambiguation layout: categories 1..n_contexts are entry points,
  // the next n_outcomes are archetype-specific targets, the last one is the
  // shared popular category.
  size_t n_contexts() const { return (num_categories - 1) / 2; }
  size_t n_outcomes() const { return num_categories - 1 - n_contexts(); }
  int32_t popular_category() const { return static_cast<int32_t>(num_categories); }
};

// trans[a][c-1][c'-1] = P(next = c' | current = c, archetype a); rows sum to 1.
std::vector<std::vector<std::vector<double>>> build_transitions(const SyntheticSpec& spec);

struct SynthResult {
  std::vector<data::Interaction> rows;  // sorted by (user, ts)
  std::map<std::string, int> archetype_of;
};

SynthResult synth_generate(const SyntheticSpec& spec);

// Writes the canonical TSV plus a truth JSON (per-user archetype and the
// generating parameters) for diagnostics.
void write_synth(const std::string& tsv_path, const std::string& truth_path,
                 const SynthResult& result, const SyntheticSpec& spec);

std::string category_id(int32_t index);  // "c01", "c02", ...
std::string user_id(size_t index);       // "u00000", ...
std::string item_id(size_t index);       // "i00000", ...

}  // namespace ccrec::synth
