#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ccrec/data.hpp"
#include "ccrec/rng.hpp"
#include "doctest.h"
#include "rr_fixture.hpp"

using namespace ccrec::data;
using ccrec::fnv1a64;

namespace {

constexpr int64_t T = rrfix::kT;
constexpr int64_t D = rrfix::kD;

std::string temp_path(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / "ccrec_data_test";
  std::filesystem::create_directories(dir);
  return (dir / tag).string();
}

std::vector<Interaction> load_fixture(IngestStats& stats) {
  static rrfix::Files f =
      rrfix::write_rr100(std::filesystem::temp_directory_path() / "ccrec_data_test");
  return ingest_retailrocket(f.events, {f.props1, f.props2}, stats);
}

SplitPolicy leave_last_policy() {
  SplitPolicy p;
  p.kind = SplitKind::LeaveLast;
  p.leave_n = 1;
  p.holdout_fraction = 0.0;
  p.window_days = 5.0;
  return p;
}

const RawExample* find_user(const std::vector<RawExample>& v, const std::string& u) {
  for (const auto& e : v)
    if (e.user == u) return &e;
  return nullptr;
}

std::vector<std::string> group_cats(const std::vector<RawGroup>& gs) {
  std::vector<std::string> out;
  for (const auto& g : gs) out.push_back(g.category);
  return out;
}

}  // namespace

TEST_CASE("fnv-1a 64 matches published reference values") {
  CHECK(fnv1a64(std::string("")) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ull);
}

TEST_CASE("ingest counts rows, malformed lines and unmapped items") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  CHECK(stats.rows_read == 100);
  CHECK(stats.malformed == 2);
  CHECK(stats.unmapped == 1);  // item 105 has no categoryid property
  CHECK(rows.size() == 97);

  // Millisecond timestamps land as seconds; the latest property row wins.
  for (const auto& r : rows) {
    if (r.user == "3" && r.item == "104") {
      CHECK(r.ts == T);
      CHECK(r.category == "20");
    }
  }
  // Sorted by (user, ts).
  CHECK(std::is_sorted(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.user != b.user ? a.user < b.user : a.ts < b.ts;
  }));
}

TEST_CASE("canonical TSV round-trips the ingested interactions") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  std::string path = temp_path("canonical.tsv");
  write_canonical(path, rows);
  IngestStats stats2;
  auto back = ingest_canonical(path, stats2);
  CHECK(back == rows);
  CHECK(stats2.rows_read == rows.size());
  CHECK(stats2.malformed == 0);
}

TEST_CASE("five-day grouping honors the inclusive window boundary") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  std::vector<Interaction> u1;
  for (const auto& r : rows)
    if (r.user == "1") u1.push_back(r);
  auto groups = group_events(u1, 5.0);
  REQUIRE(groups.size() == 4);
  CHECK(groups[0].category == "10");
  CHECK(groups[0].window_start == T);
  CHECK(groups[0].items == std::vector<std::string>{"101", "101", "101"});
  CHECK(groups[1].category == "20");
  CHECK(groups[1].window_start == T + 3 * D);
  CHECK(groups[2].category == "10");  // +5d+1s starts a new group
  CHECK(groups[2].window_start == T + 5 * D + 1);
  CHECK(groups[2].items == std::vector<std::string>{"101"});
  CHECK(groups[3].category == "30");
  CHECK(groups[3].window_start == T + 9 * D);

  // Re-grouping the flattened groups reproduces them exactly.
  std::vector<Interaction> flat;
  for (const auto& g : groups)
    for (size_t i = 0; i < g.items.size(); ++i)
      flat.push_back({"1", g.items[i], g.category, g.ts[i]});
  std::sort(flat.begin(), flat.end(),
            [](const auto& a, const auto& b) { return a.ts < b.ts; });
  CHECK(group_events(flat, 5.0) == groups);
}

TEST_CASE("leave-last split matches the hand-tallied fixture") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  SplitResult r = split_examples(rows, leave_last_policy());

  CHECK(r.stats.users_total == 32);
  CHECK(r.stats.users_dropped_no_past == 2);  // users 4 and 5: one group each
  CHECK(r.stats.users_dropped_no_future == 0);
  CHECK(r.stats.leakage_violations == 0);
  CHECK(r.stats.audit_ok);
  CHECK(r.train.size() == 30);
  CHECK(r.test.size() == 30);  // holdout 0: every kept user in both

  const RawExample* u1 = find_user(r.train, "1");
  REQUIRE(u1);
  CHECK(group_cats(u1->past) == std::vector<std::string>{"10", "20", "10"});
  CHECK(u1->past[0].items.size() == 3);
  CHECK(u1->past[2].window_start == T + 5 * D + 1);
  CHECK(group_cats(u1->future) == std::vector<std::string>{"30"});
  CHECK(u1->max_past_ts == T + 5 * D + 1);
  CHECK(u1->min_future_ts == T + 9 * D);

  // The straddling category-20 window: its pre-cutoff part stays in the
  // past, its post-cutoff event re-anchors on the future side.
  const RawExample* u2 = find_user(r.train, "2");
  REQUIRE(u2);
  CHECK(group_cats(u2->past) == std::vector<std::string>{"10", "20"});
  CHECK(u2->past[1].window_start == T + 11 * D);
  CHECK(u2->past[1].items.size() == 1);
  CHECK(group_cats(u2->future) == std::vector<std::string>{"30", "20"});
  CHECK(u2->future[1].window_start == T + 14 * D);

  const RawExample* u6 = find_user(r.train, "6");
  REQUIRE(u6);
  CHECK(group_cats(u6->past) == std::vector<std::string>{"10", "20", "30", "10"});
  CHECK(group_cats(u6->future) == std::vector<std::string>{"20"});

  // Conservation: every kept user's past+future events add back up.
  size_t kept_events = 0;
  for (const auto& e : r.train) {
    for (const auto& g : e.past) kept_events += g.items.size();
    for (const auto& g : e.future) kept_events += g.items.size();
  }
  CHECK(kept_events == 97 - 3);  // dropped users 4 (1 event) and 5 (2 events)

  // Audit invariant holds for every kept example.
  for (const auto& e : r.train) CHECK(e.max_past_ts < e.min_future_ts);
}

TEST_CASE("cutoff split keeps boundary events in the past") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  SplitPolicy p = leave_last_policy();
  p.kind = SplitKind::Cutoff;
  p.cutoff_ts = T + 10 * D;  // user 3/8 future events land exactly here
  SplitResult r = split_examples(rows, p);

  // Only users 2 and 6 still have anything after the cutoff.
  CHECK(r.train.size() == 2);
  CHECK(r.stats.users_dropped_no_future == 30);
  CHECK(r.stats.users_dropped_no_past == 0);

  const RawExample* u2 = find_user(r.train, "2");
  REQUIRE(u2);
  CHECK(group_cats(u2->past) == std::vector<std::string>{"10"});
  CHECK(group_cats(u2->future) == std::vector<std::string>{"20", "30"});
  CHECK(u2->future[0].items.size() == 2);  // T+11d and T+14d share one window

  const RawExample* u6 = find_user(r.train, "6");
  REQUIRE(u6);
  CHECK(group_cats(u6->past) == std::vector<std::string>{"10", "20"});
  CHECK(group_cats(u6->future) == std::vector<std::string>{"30", "10", "20"});
}

TEST_CASE("group caps keep the most recent past and earliest future") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  SplitPolicy p = leave_last_policy();
  p.max_past = 2;
  SplitResult r = split_examples(rows, p);
  const RawExample* u1 = find_user(r.train, "1");
  REQUIRE(u1);
  CHECK(group_cats(u1->past) == std::vector<std::string>{"20", "10"});
  const RawExample* u6 = find_user(r.train, "6");
  REQUIRE(u6);
  CHECK(group_cats(u6->past) == std::vector<std::string>{"30", "10"});

  // Event-unit cap trims raw events before grouping.
  SplitPolicy pe = leave_last_policy();
  pe.cap_unit = CapUnit::Events;
  pe.max_past = 2;
  SplitResult re = split_examples(rows, pe);
  const RawExample* v1 = find_user(re.train, "1");
  REQUIRE(v1);
  // user 1's most recent two past events: 10@T+5d and 10@T+5d+1s
  CHECK(group_cats(v1->past) == std::vector<std::string>{"10"});
  CHECK(v1->past[0].items.size() == 2);
  CHECK(v1->past[0].window_start == T + 5 * D);
}

TEST_CASE("user holdout is deterministic, disjoint and near the fraction") {
  std::vector<Interaction> rows;
  for (int u = 0; u < 400; ++u) {
    std::string user = "user" + std::to_string(u);
    rows.push_back({user, "a", "10", T});
    rows.push_back({user, "b", "20", T + 7 * D});
  }
  sort_interactions(rows);
  SplitPolicy p = leave_last_policy();
  p.holdout_fraction = 0.25;
  p.holdout_seed = 7;
  SplitResult r1 = split_examples(rows, p);
  SplitResult r2 = split_examples(rows, p);
  CHECK(r1.train.size() + r1.test.size() == 400);
  CHECK(r1.test.size() > 60);
  CHECK(r1.test.size() < 140);
  std::set<std::string> train_users, test_users, test_users2;
  for (const auto& e : r1.train) train_users.insert(e.user);
  for (const auto& e : r1.test) test_users.insert(e.user);
  for (const auto& e : r2.test) test_users2.insert(e.user);
  CHECK(test_users == test_users2);
  for (const auto& u : test_users) CHECK(train_users.count(u) == 0);

  p.holdout_seed = 8;  // a different seed reshuffles the assignment
  SplitResult r3 = split_examples(rows, p);
  std::set<std::string> test3;
  for (const auto& e : r3.test) test3.insert(e.user);
  CHECK(test3 != test_users);
}

TEST_CASE("vocabulary is lexicographic over training categories only") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  SplitResult r = split_examples(rows, leave_last_policy());
  Vocabulary v = build_vocab(r.train, 512);
  REQUIRE(v.num_categories() == 4);
  CHECK(v.index_of("10") == 1);
  CHECK(v.index_of("100") == 2);  // string order, not numeric
  CHECK(v.index_of("20") == 3);
  CHECK(v.index_of("30") == 4);
  CHECK(v.index_of("999") == 0);  // unknown

  std::string path = temp_path("vocab.json");
  save_vocab(path, v);
  Vocabulary back = load_vocab(path);
  CHECK(back.category_index == v.category_index);
  CHECK(back.hash_dim == v.hash_dim);
}

TEST_CASE("canonical examples match the fixture end to end") {
  IngestStats stats;
  auto rows = load_fixture(stats);
  SplitResult r = split_examples(rows, leave_last_policy());
  Vocabulary v = build_vocab(r.train, 512);
  CanonStats cs;
  auto examples = canonicalize(r.train, v, cs);
  REQUIRE(examples.size() == 30);
  CHECK(cs.unknown_past == 0);
  CHECK(cs.unknown_future == 0);
  CHECK(cs.dropped_no_known_past == 0);
  CHECK(cs.dropped_empty_gamma == 0);

  const UserExample* u1 = nullptr;
  for (const auto& e : examples)
    if (e.user == "1") u1 = &e;
  REQUIRE(u1);
  CHECK(u1->delta == std::vector<int32_t>{1, 3, 1});
  REQUIRE(u1->groups.size() == 3);
  CHECK(u1->groups[0].category == 1);
  CHECK(u1->groups[0].window_start == T);
  uint32_t b101 = static_cast<uint32_t>(fnv1a64(std::string("101")) % 512);
  CHECK(u1->groups[0].profile_nonzeros ==
        std::vector<std::pair<uint32_t, uint32_t>>{{b101, 3}});
  CHECK(u1->gamma == std::vector<int32_t>{4});

  const UserExample* u2 = nullptr;
  for (const auto& e : examples)
    if (e.user == "2") u2 = &e;
  REQUIRE(u2);
  CHECK(u2->delta == std::vector<int32_t>{1, 3});
  CHECK(u2->gamma == std::vector<int32_t>{3, 4});  // ascending, deduplicated

  // JSONL round trip preserves everything.
  std::string path = temp_path("examples.jsonl");
  write_examples(path, examples);
  auto back = read_examples(path);
  CHECK(back == examples);
}

TEST_CASE("unknown categories mask the past and shrink the future") {
  Vocabulary v;
  v.category_index = {{"10", 1}, {"20", 2}, {"30", 3}};
  v.hash_dim = 64;
  auto group = [](const char* cat, int64_t ws) {
    RawGroup g;
    g.category = cat;
    g.window_start = ws;
    g.items = {"x"};
    g.ts = {ws};
    return g;
  };
  RawExample ex;
  ex.user = "u";
  ex.past = {group("10", T), group("99", T + 6 * D), group("20", T + 12 * D)};
  ex.future = {group("99", T + 20 * D), group("30", T + 21 * D), group("10", T + 22 * D)};
  RawExample no_known_past;
  no_known_past.user = "v";
  no_known_past.past = {group("99", T)};
  no_known_past.future = {group("10", T + 6 * D)};
  RawExample empty_gamma;
  empty_gamma.user = "w";
  empty_gamma.past = {group("10", T)};
  empty_gamma.future = {group("99", T + 6 * D)};

  CanonStats cs;
  auto out = canonicalize({ex, no_known_past, empty_gamma}, v, cs);
  REQUIRE(out.size() == 1);
  CHECK(out[0].delta == std::vector<int32_t>{1, 0, 2});  // masked middle entry
  REQUIRE(out[0].groups.size() == 2);  // no record for the unknown group
  CHECK(out[0].groups[0].category == 1);
  CHECK(out[0].groups[1].category == 2);
  CHECK(out[0].gamma == std::vector<int32_t>{1, 3});
  // Unknown groups are tallied even in examples that end up dropped.
  CHECK(cs.unknown_past == 2);
  CHECK(cs.unknown_future == 2);
  CHECK(cs.dropped_no_known_past == 1);
  CHECK(cs.dropped_empty_gamma == 1);
}

TEST_CASE("item profiles hash counts into sorted sparse buckets") {
  auto prof = build_item_profile({"a", "b", "a", "c", "a"}, 64);
  uint32_t ba = static_cast<uint32_t>(fnv1a64(std::string("a")) % 64);
  uint32_t bb = static_cast<uint32_t>(fnv1a64(std::string("b")) % 64);
  uint32_t bc = static_cast<uint32_t>(fnv1a64(std::string("c")) % 64);
  REQUIRE(prof.size() == 3);
  CHECK(std::is_sorted(prof.begin(), prof.end()));
  for (const auto& [bucket, count] : prof) {
    if (bucket == ba) CHECK(count == 3);
    if (bucket == bb) CHECK(count == 1);
    if (bucket == bc) CHECK(count == 1);
  }
}

TEST_CASE("window encoding left-pads and truncates to the last k entries") {
  UserExample e;
  e.user = "u";
  e.delta = {1, 3, 1};
  UserExample e2;
  e2.user = "v";
  e2.delta = {2, 0, 4, 5, 0, 6};

  auto batch = encode_window({e, e2}, 0, 2, 5);
  CHECK(batch.b == 2);
  CHECK(batch.k == 5);
  // row 0: [PAD PAD 1 3 1]
  CHECK(batch.idx == std::vector<int32_t>({0, 0, 1, 3, 1, 0, 4, 5, 0, 6}));
  CHECK(batch.mask ==
        std::vector<uint8_t>({0, 0, 1, 1, 1, 0, 1, 1, 0, 1}));

  auto short_batch = encode_window({e2}, 0, 1, 3);
  CHECK(short_batch.idx == std::vector<int32_t>({5, 0, 6}));
  CHECK(short_batch.mask == std::vector<uint8_t>({1, 0, 1}));
}

TEST_CASE("tmall-style column mapping ingests seconds directly") {
  std::string path = temp_path("tmall.csv");
  {
    std::ofstream out(path);
    out << "user_id,item_id,cat_id,merchant_id,time_stamp\n";
    out << "7,500,42,1," << T << "\n";
    out << "7,501,42,1," << T + 3600 << "\n";
    out << "bad,row,only\n";
  }
  IngestStats stats;
  TmallColumns cols;
  auto rows = ingest_tmall(path, cols, stats);
  CHECK(stats.rows_read == 3);
  CHECK(stats.malformed == 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].user == "7");
  CHECK(rows[0].item == "500");
  CHECK(rows[0].category == "42");
  CHECK(rows[0].ts == T);
}
