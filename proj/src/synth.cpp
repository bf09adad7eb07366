#include "ccrec/synth.hpp"

#include <cstdio>
#include <fstream>

#include "ccrec/rng.hpp"
#include "json.hpp"

namespace ccrec::synth {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_users == 0) throw ConfigError("num_users must be positive");
  if (num_archetypes == 0) throw ConfigError("num_archetypes must be positive");
  if (items_per_category < num_archetypes)
    throw ConfigError("items_per_category must cover every archetype cluster");
  if (past_groups == 0 || future_steps == 0)
    throw ConfigError("past_groups and future_steps must be positive");
  if (min_items_per_group == 0 || max_items_per_group < min_items_per_group)
    throw ConfigError("invalid items-per-group range");
  if (scenario == "disambiguation") {
    if (num_categories < 5)
      throw ConfigError("disambiguation scenario needs at least 5 categories");
    if (num_archetypes > n_outcomes())
      throw ConfigError("more archetypes than outcome categories");
    if (outcome_prob <= 0 || popular_prob < 0 || outcome_prob + popular_prob >= 1.0)
      throw ConfigError("outcome_prob + popular_prob must stay below 1");
  } else if (scenario == "chain" || scenario == "uniform") {
    if (num_categories < 2) throw ConfigError("need at least 2 categories");
  } else {
    throw ConfigError("unknown scenario '" + scenario + "'");
  }
}

std::string category_id(int32_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%02d", index);
  return buf;
}

std::string user_id(size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%05zu", index);
  return buf;
}

std::string item_id(size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "i%05zu", index);
  return buf;
}

std::vector<std::vector<std::vector<double>>> build_transitions(const SyntheticSpec& spec) {
  spec.validate();
  size_t S = spec.num_categories, A = spec.num_archetypes;
  std::vector trans(A, std::vector(S, std::vector<double>(S, 0.0)));
  if (spec.scenario == "uniform") {
    for (size_t a = 0; a < A; ++a)
      for (size_t c = 0; c < S; ++c)
        for (size_t n = 0; n < S; ++n) trans[a][c][n] = 1.0 / static_cast<double>(S);
    return trans;
  }
  if (spec.scenario == "chain") {
    for (size_t a = 0; a < A; ++a)
      for (size_t c = 0; c < S; ++c) trans[a][c][(c + 1) % S] = 1.0;
    return trans;
  }
  // Disambiguation. Context rows concentrate on the archetype's outcome for
  // that context; outcome and popular rows are shared by all archetypes
  // (uniform return to the contexts), so the observable history distribution
  // does not depend on the archetype.
  size_t nc = spec.n_contexts(), no = spec.n_outcomes();
  size_t first_outcome = nc;             // 0-based category index
  size_t popular = S - 1;
  double rest = 1.0 - spec.outcome_prob - spec.popular_prob;
  for (size_t a = 0; a < A; ++a) {
    for (size_t c = 0; c < nc; ++c) {
      size_t target = first_outcome + (c + a) % no;
      for (size_t o = 0; o < no; ++o) {
        size_t cat = first_outcome + o;
        trans[a][c][cat] = (cat == target)
                               ? spec.outcome_prob
                               : (no > 1 ? rest / static_cast<double>(no - 1) : 0.0);
      }
      trans[a][c][popular] += spec.popular_prob;
      if (no == 1) trans[a][c][popular] += rest;
    }
    for (size_t c = nc; c < S; ++c)
      for (size_t x = 0; x < nc; ++x) trans[a][c][x] = 1.0 / static_cast<double>(nc);
  }
  return trans;
}

SynthResult synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  auto trans = build_transitions(spec);
  size_t S = spec.num_categories, A = spec.num_archetypes;
  size_t ipc = spec.items_per_category;
  size_t cluster = ipc / A;

  SynthResult result;
  Rng root(spec.seed);
  const int64_t day = 86400;

  for (size_t u = 0; u < spec.num_users; ++u) {
    Rng rng = root.fork(u);
    std::string user = user_id(u);
    int archetype = static_cast<int>(rng.below(A));
    result.archetype_of[user] = archetype;

    // Walk the category chain: past_groups steps before the cutoff, then
    // future_steps after it.
    std::vector<int32_t> walk;
    int32_t current;
    if (spec.scenario == "disambiguation")
      current = static_cast<int32_t>(rng.below(spec.n_contexts())) + 1;
    else
      current = static_cast<int32_t>(rng.below(S)) + 1;
    walk.push_back(current);
    size_t total_steps = spec.past_groups + spec.future_steps;
    for (size_t step = 1; step < total_steps; ++step) {
      current = static_cast<int32_t>(
                    rng.pick(trans[archetype][static_cast<size_t>(current) - 1])) +
                1;
      walk.push_back(current);
    }

    for (size_t g = 0; g < walk.size(); ++g) {
      int32_t cat = walk[g];
      int64_t window_start;
      if (g < spec.past_groups) {
        size_t back = spec.past_groups - g;  // past group: `back` weeks before cutoff
        window_start = spec.cutoff_ts - static_cast<int64_t>(back) * 7 * day;
      } else {
        size_t ahead = g - spec.past_groups;
        window_start = spec.cutoff_ts + 1 + static_cast<int64_t>(ahead) * 7 * day;
      }
      size_t span = spec.max_items_per_group - spec.min_items_per_group + 1;
      size_t n_items = spec.min_items_per_group + rng.below(span);
      size_t base = (static_cast<size_t>(cat) - 1) * ipc +
                    static_cast<size_t>(archetype) * cluster;
      for (size_t t = 0; t < n_items; ++t) {
        size_t item = base + rng.below(cluster);
        result.rows.push_back({user, item_id(item), category_id(cat),
                               window_start + static_cast<int64_t>(t) * 3600});
      }
    }
  }
  data::sort_interactions(result.rows);
  return result;
}

void write_synth(const std::string& tsv_path, const std::string& truth_path,
                 const SynthResult& result, const SyntheticSpec& spec) {
  data::write_canonical(tsv_path, result.rows);
  json j;
  j["scenario"] = spec.scenario;
  j["num_users"] = spec.num_users;
  j["num_categories"] = spec.num_categories;
  j["num_archetypes"] = spec.num_archetypes;
  j["items_per_category"] = spec.items_per_category;
  j["past_groups"] = spec.past_groups;
  j["future_steps"] = spec.future_steps;
  j["outcome_prob"] = spec.outcome_prob;
  j["popular_prob"] = spec.popular_prob;
  j["seed"] = spec.seed;
  j["cutoff_ts"] = spec.cutoff_ts;
  j["archetype"] = json::object();
  for (const auto& [user, a] : result.archetype_of) j["archetype"][user] = a;
  std::ofstream out(truth_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + truth_path);
  out << j.dump(2) << '\n';
}

}  // namespace ccrec::synth
