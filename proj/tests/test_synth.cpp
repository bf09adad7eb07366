#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ccrec/stats.hpp"
#include "ccrec/synth.hpp"
#include "doctest.h"

using namespace ccrec::synth;
using ccrec::data::Interaction;

namespace {

// Per-user category walk reconstructed from the emitted rows: one entry per
// distinct (window_start, category) burst, in time order.
struct Walk {
  std::vector<int64_t> starts;
  std::vector<int32_t> cats;
  std::vector<size_t> sizes;
};

std::map<std::string, Walk> walks_of(const std::vector<Interaction>& rows) {
  std::map<std::string, Walk> out;
  for (const auto& r : rows) {
    Walk& w = out[r.user];
    int32_t cat = std::stoi(r.category.substr(1));
    // Group members sit within hours of their window_start; the next group
    // starts a full week later, so a 7-day gap (or a category change) marks
    // a new group.
    if (w.starts.empty() || r.ts - w.starts.back() >= 7 * 86400 ||
        w.cats.back() != cat) {
      w.starts.push_back(r.ts);
      w.cats.push_back(cat);
      w.sizes.push_back(1);
    } else {
      ++w.sizes.back();
    }
  }
  return out;
}

SyntheticSpec small_disambiguation(uint64_t seed) {
  SyntheticSpec spec;
  spec.scenario = "disambiguation";
  spec.num_users = 3000;
  spec.num_categories = 8;  // 3 contexts, 4 outcomes, 1 popular
  spec.num_archetypes = 2;
  spec.items_per_category = 40;
  spec.past_groups = 1;
  spec.future_steps = 1;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("transition rows are probability distributions") {
  for (const char* scenario : {"disambiguation", "chain", "uniform"}) {
    SyntheticSpec spec = small_disambiguation(1);
    spec.scenario = scenario;
    auto trans = build_transitions(spec);
    REQUIRE(trans.size() == spec.num_archetypes);
    for (const auto& per_cat : trans)
      for (const auto& row : per_cat) {
        double sum = 0.0;
        for (double p : row) {
          CHECK(p >= 0.0);
          sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("disambiguation transitions place stated mass per archetype") {
  SyntheticSpec spec = small_disambiguation(1);
  auto trans = build_transitions(spec);
  size_t nc = spec.n_contexts(), no = spec.n_outcomes();
  size_t popular = spec.num_categories - 1;
  for (size_t a = 0; a < spec.num_archetypes; ++a) {
    for (size_t c = 0; c < nc; ++c) {
      size_t target = nc + (c + a) % no;
      CHECK(trans[a][c][target] == doctest::Approx(spec.outcome_prob));
      CHECK(trans[a][c][popular] == doctest::Approx(spec.popular_prob));
      for (size_t x = 0; x < nc; ++x) CHECK(trans[a][c][x] == 0.0);
    }
    // Outcome and popular rows return uniformly to the contexts for every
    // archetype, so the chain's observable marginals stay archetype-free.
    for (size_t c = nc; c < spec.num_categories; ++c) {
      for (size_t x = 0; x < nc; ++x)
        CHECK(trans[a][c][x] == doctest::Approx(1.0 / static_cast<double>(nc)));
      for (size_t x = nc; x < spec.num_categories; ++x) CHECK(trans[a][c][x] == 0.0);
    }
  }
  // Rows outside the contexts are identical across archetypes.
  for (size_t c = nc; c < spec.num_categories; ++c) CHECK(trans[0][c] == trans[1][c]);
}

TEST_CASE("generation is deterministic in the seed") {
  SyntheticSpec spec = small_disambiguation(17);
  spec.num_users = 200;
  SynthResult a = synth_generate(spec);
  SynthResult b = synth_generate(spec);
  CHECK(a.rows == b.rows);
  CHECK(a.archetype_of == b.archetype_of);
  spec.seed = 18;
  SynthResult c = synth_generate(spec);
  CHECK(a.rows != c.rows);
}

TEST_CASE("every user emits the configured group and item counts") {
  SyntheticSpec spec = small_disambiguation(5);
  spec.num_users = 400;
  spec.past_groups = 2;
  spec.future_steps = 2;
  SynthResult res = synth_generate(spec);
  auto walks = walks_of(res.rows);
  CHECK(walks.size() == spec.num_users);
  CHECK(res.archetype_of.size() == spec.num_users);

  size_t total_rows = 0;
  for (const auto& [user, w] : walks) {
    REQUIRE(w.cats.size() == spec.past_groups + spec.future_steps);
    for (size_t g = 0; g < w.sizes.size(); ++g) {
      CHECK(w.sizes[g] >= spec.min_items_per_group);
      CHECK(w.sizes[g] <= spec.max_items_per_group);
      total_rows += w.sizes[g];
      // past groups end before the cutoff, future groups start after it
      if (g < spec.past_groups)
        CHECK(w.starts[g] < spec.cutoff_ts);
      else
        CHECK(w.starts[g] > spec.cutoff_ts);
    }
    CHECK(std::is_sorted(w.starts.begin(), w.starts.end()));
  }
  CHECK(total_rows == res.rows.size());
}

TEST_CASE("chain scenario walks the deterministic cycle") {
  SyntheticSpec spec;
  spec.scenario = "chain";
  spec.num_users = 100;
  spec.num_categories = 4;
  spec.num_archetypes = 1;
  spec.items_per_category = 8;
  spec.past_groups = 3;
  spec.future_steps = 2;
  spec.seed = 3;
  SynthResult res = synth_generate(spec);
  for (const auto& [user, w] : walks_of(res.rows)) {
    for (size_t g = 1; g < w.cats.size(); ++g)
      CHECK(w.cats[g] == (w.cats[g - 1] % 4) + 1);
  }
}

TEST_CASE("item choices live in the archetype's per-category cluster") {
  SyntheticSpec spec = small_disambiguation(7);
  spec.num_users = 500;
  SynthResult res = synth_generate(spec);
  size_t ipc = spec.items_per_category;
  size_t cluster = ipc / spec.num_archetypes;
  for (const auto& r : res.rows) {
    size_t item = static_cast<size_t>(std::stoul(r.item.substr(1)));
    size_t cat = static_cast<size_t>(std::stoul(r.category.substr(1)));
    int archetype = res.archetype_of.at(r.user);
    CHECK(item / ipc == cat - 1);  // items never leak across categories
    CHECK((item % ipc) / cluster == static_cast<size_t>(archetype));
  }
}

TEST_CASE("category history carries no archetype signal but the pair does") {
  SyntheticSpec spec = small_disambiguation(11);
  SynthResult res = synth_generate(spec);
  auto walks = walks_of(res.rows);
  size_t nc = spec.n_contexts(), no = spec.n_outcomes();

  // Row per archetype, column per observable past category (the context).
  std::vector<std::vector<int64_t>> past_table(
      spec.num_archetypes, std::vector<int64_t>(nc, 0));
  // Column per (context, outcome) pair: this is where the archetype shows.
  std::vector<std::vector<int64_t>> pair_table(
      spec.num_archetypes, std::vector<int64_t>(nc * no, 0));
  size_t pair_rows = 0;
  for (const auto& [user, w] : walks) {
    int a = res.archetype_of.at(user);
    size_t context = static_cast<size_t>(w.cats[0]) - 1;
    REQUIRE(context < nc);
    past_table[static_cast<size_t>(a)][context]++;
    size_t next = static_cast<size_t>(w.cats[1]) - 1;
    if (next >= nc && next < nc + no) {  // skip hops to the popular category
      pair_table[static_cast<size_t>(a)][context * no + (next - nc)]++;
      ++pair_rows;
    }
  }

  auto past = ccrec::stats::chi2_independence(past_table);
  CHECK(past.p > 0.01);  // contexts are drawn identically for every archetype

  REQUIRE(pair_rows > 1000);
  auto pair = ccrec::stats::chi2_independence(pair_table);
  CHECK(pair.p < 1e-9);  // context->outcome mapping identifies the archetype
}

TEST_CASE("synthetic artifacts round-trip through the canonical reader") {
  SyntheticSpec spec = small_disambiguation(2);
  spec.num_users = 50;
  SynthResult res = synth_generate(spec);
  auto dir = std::filesystem::temp_directory_path() / "ccrec_synth_test";
  std::filesystem::create_directories(dir);
  std::string tsv = (dir / "interactions.tsv").string();
  std::string truth = (dir / "truth.json").string();
  write_synth(tsv, truth, res, spec);

  ccrec::data::IngestStats stats;
  auto back = ccrec::data::ingest_canonical(tsv, stats);
  CHECK(back == res.rows);
  CHECK(stats.malformed == 0);

  std::ifstream in(truth);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("\"scenario\"") != std::string::npos);
  CHECK(text.find("u00000") != std::string::npos);
}

TEST_CASE("spec validation rejects inconsistent parameters") {
  SyntheticSpec ok = small_disambiguation(1);
  CHECK_NOTHROW(ok.validate());

  SyntheticSpec s = ok;
  s.num_users = 0;
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.items_per_category = 1;
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.outcome_prob = 0.8;
  s.popular_prob = 0.3;
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.num_categories = 4;  // too few for contexts + outcomes + popular
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.scenario = "mystery";
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.max_items_per_group = 1;  // below the minimum of 2
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
  s = ok;
  s.num_archetypes = 5;  // more archetypes than outcome categories
  CHECK_THROWS_AS(s.validate(), ccrec::ConfigError);
}
