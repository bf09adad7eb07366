#include "ccrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ccrec/rng.hpp"
#include "json.hpp"

namespace ccrec::data {

using nlohmann::json;

namespace {

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_i64(const std::string& s, int64_t& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

bool next_line(std::ifstream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

size_t column_of(const std::vector<std::string>& header, const std::string& name,
                 const std::string& path) {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw DataError("column '" + name + "' missing from " + path);
}

void warn_malformed(const std::string& path, size_t line_no) {
  std::fprintf(stderr, "warning: %s:%zu: malformed row skipped\n", path.c_str(),
               line_no);
}

}  // namespace

std::vector<Interaction> ingest_canonical(const std::string& path, IngestStats& stats) {
  std::ifstream in = open_input(path);
  std::vector<Interaction> rows;
  std::string line;
  size_t line_no = 0;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++stats.rows_read;
    auto f = split_on(line, '\t');
    int64_t ts = 0;
    if (f.size() != 4 || f[0].empty() || f[1].empty() || f[2].empty() ||
        !parse_i64(f[3], ts) || ts < 0) {
      ++stats.malformed;
      warn_malformed(path, line_no);
      continue;
    }
    rows.push_back({f[0], f[1], f[2], ts});
  }
  sort_interactions(rows);
  return rows;
}

std::vector<Interaction> ingest_retailrocket(const std::string& events_path,
                                             const std::vector<std::string>& property_paths,
                                             IngestStats& stats) {
  // Pass 1: item -> latest categoryid value (later timestamp wins; equal
  // timestamps resolve to the later row).
  std::map<std::string, std::pair<int64_t, std::string>> category_of;
  for (const auto& path : property_paths) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!next_line(in, line)) throw DataError("empty property file " + path);
    auto header = split_on(line, ',');
    size_t c_ts = column_of(header, "timestamp", path);
    size_t c_item = column_of(header, "itemid", path);
    size_t c_prop = column_of(header, "property", path);
    size_t c_val = column_of(header, "value", path);
    size_t need = std::max({c_ts, c_item, c_prop, c_val}) + 1;
    size_t line_no = 1;
    while (next_line(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto f = split_on(line, ',');
      if (f.size() < need) {
        warn_malformed(path, line_no);
        continue;
      }
      if (f[c_prop] != "categoryid") continue;
      int64_t ts = 0;
      if (!parse_i64(f[c_ts], ts) || f[c_val].empty()) {
        warn_malformed(path, line_no);
        continue;
      }
      auto it = category_of.find(f[c_item]);
      if (it == category_of.end() || ts >= it->second.first)
        category_of[f[c_item]] = {ts, f[c_val]};
    }
  }

  std::ifstream in = open_input(events_path);
  std::vector<Interaction> rows;
  std::string line;
  if (!next_line(in, line)) throw DataError("empty events file " + events_path);
  auto header = split_on(line, ',');
  size_t c_ts = column_of(header, "timestamp", events_path);
  size_t c_user = column_of(header, "visitorid", events_path);
  size_t c_item = column_of(header, "itemid", events_path);
  size_t need = std::max({c_ts, c_user, c_item}) + 1;
  size_t line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++stats.rows_read;
    auto f = split_on(line, ',');
    int64_t ts_ms = 0;
    if (f.size() < need || f[c_user].empty() || f[c_item].empty() ||
        !parse_i64(f[c_ts], ts_ms) || ts_ms < 0) {
      ++stats.malformed;
      warn_malformed(events_path, line_no);
      continue;
    }
    auto it = category_of.find(f[c_item]);
    if (it == category_of.end()) {
      ++stats.unmapped;
      continue;
    }
    rows.push_back({f[c_user], f[c_item], it->second.second, ts_ms / 1000});
  }
  sort_interactions(rows);
  return rows;
}

std::vector<Interaction> ingest_tmall(const std::string& path, const TmallColumns& cols,
                                      IngestStats& stats) {
  std::ifstream in = open_input(path);
  std::vector<Interaction> rows;
  std::string line;
  if (!next_line(in, line)) throw DataError("empty input file " + path);
  auto header = split_on(line, ',');
  size_t c_user = column_of(header, cols.user, path);
  size_t c_item = column_of(header, cols.item, path);
  size_t c_cat = column_of(header, cols.category, path);
  size_t c_ts = column_of(header, cols.time, path);
  size_t need = std::max({c_user, c_item, c_cat, c_ts}) + 1;
  size_t line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++stats.rows_read;
    auto f = split_on(line, ',');
    int64_t ts = 0;
    if (f.size() < need || f[c_user].empty() || f[c_item].empty() ||
        f[c_cat].empty() || !parse_i64(f[c_ts], ts) || ts < 0) {
      ++stats.malformed;
      warn_malformed(path, line_no);
      continue;
    }
    rows.push_back({f[c_user], f[c_item], f[c_cat], ts});
  }
  sort_interactions(rows);
  return rows;
}

void sort_interactions(std::vector<Interaction>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.ts < b.ts;
  });
}

void write_canonical(const std::string& path, const std::vector<Interaction>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : rows)
    out << r.user << '\t' << r.item << '\t' << r.category << '\t' << r.ts << '\n';
  if (!out) throw IoError("write failed for " + path);
}

std::vector<RawGroup> group_events(const std::vector<Interaction>& events,
                                   double window_days) {
  int64_t window_sec = static_cast<int64_t>(window_days * 86400.0 + 0.5);
  std::map<std::string, RawGroup> open;
  std::vector<RawGroup> done;
  for (const auto& ev : events) {
    auto it = open.find(ev.category);
    if (it != open.end() && ev.ts - it->second.window_start <= window_sec) {
      it->second.items.push_back(ev.item);
      it->second.ts.push_back(ev.ts);
      continue;
    }
    if (it != open.end()) {
      done.push_back(std::move(it->second));
      open.erase(it);
    }
    RawGroup g;
    g.category = ev.category;
    g.window_start = ev.ts;
    g.items.push_back(ev.item);
    g.ts.push_back(ev.ts);
    open.emplace(ev.category, std::move(g));
  }
  for (auto& [cat, g] : open) done.push_back(std::move(g));
  std::sort(done.begin(), done.end(), [](const RawGroup& a, const RawGroup& b) {
    if (a.window_start != b.window_start) return a.window_start < b.window_start;
    return a.category < b.category;
  });
  return done;
}

std::map<std::string, std::vector<RawGroup>> group_all(
    const std::vector<Interaction>& sorted_rows, double window_days) {
  std::map<std::string, std::vector<RawGroup>> out;
  size_t i = 0;
  while (i < sorted_rows.size()) {
    size_t j = i;
    while (j < sorted_rows.size() && sorted_rows[j].user == sorted_rows[i].user) ++j;
    std::vector<Interaction> events(sorted_rows.begin() + i, sorted_rows.begin() + j);
    out[sorted_rows[i].user] = group_events(events, window_days);
    i = j;
  }
  return out;
}

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

namespace {

int64_t max_ts_of(const std::vector<RawGroup>& groups) {
  int64_t m = INT64_MIN;
  for (const auto& g : groups)
    for (int64_t t : g.ts) m = std::max(m, t);
  return m;
}

int64_t min_ts_of(const std::vector<RawGroup>& groups) {
  int64_t m = INT64_MAX;
  for (const auto& g : groups)
    for (int64_t t : g.ts) m = std::min(m, t);
  return m;
}

}  // namespace

SplitResult split_examples(const std::vector<Interaction>& sorted_rows,
                           const SplitPolicy& policy) {
  SplitResult result;
  size_t i = 0;
  while (i < sorted_rows.size()) {
    size_t j = i;
    while (j < sorted_rows.size() && sorted_rows[j].user == sorted_rows[i].user) ++j;
    std::vector<Interaction> events(sorted_rows.begin() + i, sorted_rows.begin() + j);
    const std::string& user = sorted_rows[i].user;
    i = j;
    ++result.stats.users_total;

    int64_t cutoff;
    if (policy.kind == SplitKind::Cutoff) {
      cutoff = policy.cutoff_ts;
    } else {
      auto all_groups = group_events(events, policy.window_days);
      if (all_groups.size() <= policy.leave_n) {
        ++result.stats.users_dropped_no_past;
        continue;
      }
      cutoff = all_groups[all_groups.size() - policy.leave_n].window_start - 1;
    }

    std::vector<Interaction> past_ev, future_ev;
    for (const auto& ev : events)
      (ev.ts <= cutoff ? past_ev : future_ev).push_back(ev);

    if (policy.cap_unit == CapUnit::Events) {
      if (policy.max_past > 0 && past_ev.size() > policy.max_past)
        past_ev.erase(past_ev.begin(), past_ev.end() - policy.max_past);
      if (policy.max_future > 0 && future_ev.size() > policy.max_future)
        future_ev.resize(policy.max_future);
    }

    RawExample ex;
    ex.user = user;
    ex.past = group_events(past_ev, policy.window_days);
    ex.future = group_events(future_ev, policy.window_days);
    if (policy.cap_unit == CapUnit::Groups) {
      if (policy.max_past > 0 && ex.past.size() > policy.max_past)
        ex.past.erase(ex.past.begin(), ex.past.end() - policy.max_past);
      if (policy.max_future > 0 && ex.future.size() > policy.max_future)
        ex.future.resize(policy.max_future);
    }

    if (ex.past.empty()) {
      ++result.stats.users_dropped_no_past;
      continue;
    }
    if (ex.future.empty()) {
      ++result.stats.users_dropped_no_future;
      continue;
    }
    ex.max_past_ts = max_ts_of(ex.past);
    ex.min_future_ts = min_ts_of(ex.future);
    if (ex.max_past_ts >= ex.min_future_ts) ++result.stats.leakage_violations;

    if (policy.holdout_fraction <= 0.0) {
      result.train.push_back(ex);
      result.test.push_back(std::move(ex));
    } else {
      double u = static_cast<double>(mix64(fnv1a64(user) ^ policy.holdout_seed) >> 11) *
                 0x1.0p-53;
      if (u < policy.holdout_fraction)
        result.test.push_back(std::move(ex));
      else
        result.train.push_back(std::move(ex));
    }
  }
  result.stats.audit_ok = result.stats.leakage_violations == 0;
  return result;
}

Vocabulary build_vocab(const std::vector<RawExample>& train, size_t hash_dim) {
  if (hash_dim == 0) throw ConfigError("hash_dim must be positive");
  std::set<std::string> cats;
  for (const auto& ex : train) {
    for (const auto& g : ex.past) cats.insert(g.category);
    for (const auto& g : ex.future) cats.insert(g.category);
  }
  Vocabulary vocab;
  vocab.hash_dim = hash_dim;
  int32_t next = 1;
  for (const auto& c : cats) vocab.category_index[c] = next++;
  return vocab;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  json j;
  j["hash_dim"] = vocab.hash_dim;
  j["categories"] = json::object();
  for (const auto& [cat, idx] : vocab.category_index) j["categories"][cat] = idx;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid vocabulary file " + path + ": " + e.what());
  }
  Vocabulary vocab;
  vocab.hash_dim = j.at("hash_dim").get<size_t>();
  for (const auto& [cat, idx] : j.at("categories").items())
    vocab.category_index[cat] = idx.get<int32_t>();
  // Indices must be dense 1..N.
  std::set<int32_t> seen;
  for (const auto& [cat, idx] : vocab.category_index) seen.insert(idx);
  int32_t expect = 1;
  for (int32_t idx : seen)
    if (idx != expect++)
      throw DataError("vocabulary indices not dense in " + path);
  return vocab;
}

std::vector<std::pair<uint32_t, uint32_t>> build_item_profile(
    const std::vector<std::string>& items, size_t hash_dim) {
  std::map<uint32_t, uint32_t> counts;
  for (const auto& item : items)
    counts[static_cast<uint32_t>(fnv1a64(item) % hash_dim)]++;
  return {counts.begin(), counts.end()};
}

std::vector<UserExample> canonicalize(const std::vector<RawExample>& raw,
                                      const Vocabulary& vocab, CanonStats& stats) {
  std::vector<UserExample> out;
  for (const auto& rex : raw) {
    UserExample ex;
    ex.user = rex.user;
    bool any_known = false;
    for (const auto& g : rex.past) {
      int32_t idx = vocab.index_of(g.category);
      ex.delta.push_back(idx);
      if (idx == 0) {
        ++stats.unknown_past;
        continue;
      }
      any_known = true;
      GroupRecord rec;
      rec.category = idx;
      rec.window_start = g.window_start;
      rec.profile_nonzeros = build_item_profile(g.items, vocab.hash_dim);
      ex.groups.push_back(std::move(rec));
    }
    std::set<int32_t> gset;
    for (const auto& g : rex.future) {
      int32_t idx = vocab.index_of(g.category);
      if (idx == 0)
        ++stats.unknown_future;
      else
        gset.insert(idx);
    }
    ex.gamma.assign(gset.begin(), gset.end());
    if (!any_known) {
      ++stats.dropped_no_known_past;
      continue;
    }
    if (ex.gamma.empty()) {
      ++stats.dropped_empty_gamma;
      continue;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_examples(const std::string& path, const std::vector<UserExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& ex : examples) {
    json j;
    j["user"] = ex.user;
    j["f"] = ex.f;
    j["delta"] = ex.delta;
    j["gamma"] = ex.gamma;
    j["groups"] = json::array();
    for (const auto& g : ex.groups) {
      json gj;
      gj["category"] = g.category;
      gj["window_start"] = g.window_start;
      gj["profile_nonzeros"] = json::array();
      for (const auto& [b, c] : g.profile_nonzeros)
        gj["profile_nonzeros"].push_back({b, c});
      j["groups"].push_back(std::move(gj));
    }
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<UserExample> read_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<UserExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      UserExample ex;
      ex.user = j.at("user").get<std::string>();
      ex.f = j.at("f").get<std::vector<double>>();
      ex.delta = j.at("delta").get<std::vector<int32_t>>();
      ex.gamma = j.at("gamma").get<std::vector<int32_t>>();
      for (const auto& gj : j.at("groups")) {
        GroupRecord g;
        g.category = gj.at("category").get<int32_t>();
        g.window_start = gj.at("window_start").get<int64_t>();
        for (const auto& pair : gj.at("profile_nonzeros"))
          g.profile_nonzeros.emplace_back(pair.at(0).get<uint32_t>(),
                                          pair.at(1).get<uint32_t>());
        ex.groups.push_back(std::move(g));
      }
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

nn::SeqBatch encode_window(const std::vector<UserExample>& examples, size_t first,
                           size_t count, size_t k) {
  if (k == 0) throw ConfigError("sequence length k must be positive");
  if (first + count > examples.size()) throw DimensionError("window out of range");
  nn::SeqBatch batch;
  batch.b = count;
  batch.k = k;
  batch.idx.assign(count * k, 0);
  batch.mask.assign(count * k, 0);
  for (size_t bi = 0; bi < count; ++bi) {
    const auto& delta = examples[first + bi].delta;
    size_t take = std::min(k, delta.size());
    size_t src0 = delta.size() - take;
    size_t dst0 = k - take;
    for (size_t t = 0; t < take; ++t) {
      int32_t idx = delta[src0 + t];
      batch.idx[bi * k + dst0 + t] = idx;
      batch.mask[bi * k + dst0 + t] = idx > 0 ? 1 : 0;
    }
  }
  return batch;
}

}  // namespace ccrec::data
