#include "ccrec/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ccrec/rng.hpp"

namespace ccrec {

namespace {

// Minimal TOML subset: [section] headers, key = value lines, # comments,
// values are quoted strings, integers, floats, or booleans.
class KeyReader {
 public:
  KeyReader(const std::string& text, const std::string& origin) : origin_(origin) {
    std::istringstream in(text);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string s = strip_comment(line);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(origin_ + ":" + std::to_string(line_no) +
                            ": malformed section header");
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin_ + ":" + std::to_string(line_no) +
                          ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(origin_ + ":" + std::to_string(line_no) +
                          ": empty key or value");
      std::string full = section.empty() ? key : section + "." + key;
      if (values_.count(full))
        throw ConfigError(origin_ + ": duplicate key '" + full + "'");
      values_[full] = unquote(value, full);
    }
  }

  std::string get_str(const std::string& key, const std::string& dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  int64_t get_int(const std::string& key, int64_t dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    int64_t v = 0;
    const std::string& s = it->second;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError("key '" + key + "' expects an integer, got '" + s + "'");
    return v;
  }

  size_t get_size(const std::string& key, size_t dflt) {
    int64_t v = get_int(key, static_cast<int64_t>(dflt));
    if (v < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<size_t>(v);
  }

  double get_double(const std::string& key, double dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    const std::string& s = it->second;
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' expects a number, got '" + s + "'");
    }
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<int> out;
    std::istringstream ss(it->second);
    std::string part;
    while (std::getline(ss, part, ',')) {
      part = trim(part);
      if (part.empty()) continue;
      int v = 0;
      auto res = std::from_chars(part.data(), part.data() + part.size(), v);
      if (res.ec != std::errc() || res.ptr != part.data() + part.size())
        throw ConfigError("key '" + key + "' expects integers, got '" + part + "'");
      out.push_back(v);
    }
    if (out.empty()) throw ConfigError("key '" + key + "' is an empty list");
    return out;
  }

  std::vector<std::string> get_str_list(const std::string& key) {
    consumed_.insert(key);
    auto it = values_.find(key);
    std::vector<std::string> out;
    if (it == values_.end()) return out;
    std::istringstream ss(it->second);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!trim(part).empty()) out.push_back(trim(part));
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key))
        throw ConfigError(origin_ + ": unknown key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool in_quote = false;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_quote = !in_quote;
      if (s[i] == '#' && !in_quote) return s.substr(0, i);
    }
    return s;
  }

  std::string unquote(const std::string& v, const std::string& key) const {
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"')
        throw ConfigError(origin_ + ": unterminated string for key '" + key + "'");
      return v.substr(1, v.size() - 2);
    }
    return v;
  }

  std::string origin_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const {
  return dataset == other.dataset && model == other.model && train == other.train &&
         synth == other.synth;
}

void RunConfig::validate() const {
  const std::set<std::string> kinds = {"canonical", "retailrocket", "tmall", "synth"};
  if (!kinds.count(dataset.source_kind))
    throw ConfigError("unknown source_kind '" + dataset.source_kind + "'");
  if (dataset.split != "leave_last" && dataset.split != "cutoff")
    throw ConfigError("split must be leave_last or cutoff");
  if (dataset.cap_unit != "groups" && dataset.cap_unit != "events")
    throw ConfigError("cap_unit must be groups or events");
  if (dataset.holdout_fraction < 0.0 || dataset.holdout_fraction >= 1.0)
    throw ConfigError("holdout_fraction must be in [0, 1)");
  if (dataset.k == 0) throw ConfigError("k must be positive");
  if (dataset.hash_dim == 0) throw ConfigError("hash_dim must be positive");
  if (dataset.window_days <= 0) throw ConfigError("window_days must be positive");
  if (model.pooling != "mean" && model.pooling != "last")
    throw ConfigError("pooling must be mean or last");
  if (model.loss_mode != "literal" && model.loss_mode != "weighted_score" &&
      model.loss_mode != "weighted_mse")
    throw ConfigError("loss_mode must be literal, weighted_score or weighted_mse");
  if (model.r_size == 0 || model.n_top == 0)
    throw ConfigError("r_size and n_top must be positive");
  if (train.lr <= 0) throw ConfigError("lr must be positive");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.ks.empty()) throw ConfigError("ks must not be empty");
  for (int k : train.ks)
    if (k <= 0) throw ConfigError("ks entries must be positive");
  if (dataset.source_kind == "synth") synth.validate();
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  KeyReader r(text, origin);
  RunConfig c;
  auto& d = c.dataset;
  d.source_kind = r.get_str("dataset.source_kind", d.source_kind);
  d.path = r.get_str("dataset.path", d.path);
  d.events_path = r.get_str("dataset.events_path", d.events_path);
  d.property_paths = r.get_str_list("dataset.property_paths");
  d.tmall_user_col = r.get_str("dataset.tmall_user_col", d.tmall_user_col);
  d.tmall_item_col = r.get_str("dataset.tmall_item_col", d.tmall_item_col);
  d.tmall_cat_col = r.get_str("dataset.tmall_cat_col", d.tmall_cat_col);
  d.tmall_time_col = r.get_str("dataset.tmall_time_col", d.tmall_time_col);
  d.window_days = r.get_double("dataset.window_days", d.window_days);
  d.split = r.get_str("dataset.split", d.split);
  d.cutoff_ts = r.get_int("dataset.cutoff_ts", d.cutoff_ts);
  d.leave_n = r.get_size("dataset.leave_n", d.leave_n);
  d.max_past = r.get_size("dataset.max_past", d.max_past);
  d.max_future = r.get_size("dataset.max_future", d.max_future);
  d.cap_unit = r.get_str("dataset.cap_unit", d.cap_unit);
  d.holdout_fraction = r.get_double("dataset.holdout_fraction", d.holdout_fraction);
  d.k = r.get_size("dataset.k", d.k);
  d.hash_dim = r.get_size("dataset.hash_dim", d.hash_dim);

  auto& m = c.model;
  m.d1 = r.get_size("model.d1", m.d1);
  m.heads = r.get_size("model.heads", m.heads);
  m.layers = r.get_size("model.layers", m.layers);
  m.ff_dim = r.get_size("model.ff_dim", m.ff_dim);
  m.pooling = r.get_str("model.pooling", m.pooling);
  m.vae_hidden = r.get_size("model.vae_hidden", m.vae_hidden);
  m.vae_latent = r.get_size("model.vae_latent", m.vae_latent);
  m.d2 = r.get_size("model.d2", m.d2);
  m.scorer_hidden = r.get_size("model.scorer_hidden", m.scorer_hidden);
  m.r_size = r.get_size("model.r_size", m.r_size);
  m.n_top = r.get_size("model.n_top", m.n_top);
  m.loss_mode = r.get_str("model.loss_mode", m.loss_mode);
  m.beta = r.get_double("model.beta", m.beta);

  auto& t = c.train;
  t.lr = r.get_double("train.lr", t.lr);
  t.epochs = r.get_size("train.epochs", t.epochs);
  t.vae_epochs = r.get_size("train.vae_epochs", t.vae_epochs);
  t.m2_epochs = r.get_size("train.m2_epochs", t.m2_epochs);
  t.batch_size = r.get_size("train.batch_size", t.batch_size);
  t.seed = static_cast<uint64_t>(r.get_int("train.seed", static_cast<int64_t>(t.seed)));
  t.ks = r.get_int_list("train.ks", t.ks);

  auto& s = c.synth;
  s.scenario = r.get_str("synth.scenario", s.scenario);
  s.num_users = r.get_size("synth.num_users", s.num_users);
  s.num_categories = r.get_size("synth.num_categories", s.num_categories);
  s.num_archetypes = r.get_size("synth.num_archetypes", s.num_archetypes);
  s.items_per_category = r.get_size("synth.items_per_category", s.items_per_category);
  s.past_groups = r.get_size("synth.past_groups", s.past_groups);
  s.future_steps = r.get_size("synth.future_steps", s.future_steps);
  s.min_items_per_group = r.get_size("synth.min_items_per_group", s.min_items_per_group);
  s.max_items_per_group = r.get_size("synth.max_items_per_group", s.max_items_per_group);
  s.outcome_prob = r.get_double("synth.outcome_prob", s.outcome_prob);
  s.popular_prob = r.get_double("synth.popular_prob", s.popular_prob);
  s.seed = static_cast<uint64_t>(r.get_int("synth.seed", static_cast<int64_t>(s.seed)));
  s.cutoff_ts = r.get_int("synth.cutoff_ts", s.cutoff_ts);

  r.finish();
  c.validate();
  return c;
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "[dataset]\n";
  out << "source_kind = " << quote(dataset.source_kind) << "\n";
  out << "path = " << quote(dataset.path) << "\n";
  out << "events_path = " << quote(dataset.events_path) << "\n";
  std::string props;
  for (size_t i = 0; i < dataset.property_paths.size(); ++i)
    props += (i ? "," : "") + dataset.property_paths[i];
  out << "property_paths = " << quote(props) << "\n";
  out << "tmall_user_col = " << quote(dataset.tmall_user_col) << "\n";
  out << "tmall_item_col = " << quote(dataset.tmall_item_col) << "\n";
  out << "tmall_cat_col = " << quote(dataset.tmall_cat_col) << "\n";
  out << "tmall_time_col = " << quote(dataset.tmall_time_col) << "\n";
  out << "window_days = " << fmt_double(dataset.window_days) << "\n";
  out << "split = " << quote(dataset.split) << "\n";
  out << "cutoff_ts = " << dataset.cutoff_ts << "\n";
  out << "leave_n = " << dataset.leave_n << "\n";
  out << "max_past = " << dataset.max_past << "\n";
  out << "max_future = " << dataset.max_future << "\n";
  out << "cap_unit = " << quote(dataset.cap_unit) << "\n";
  out << "holdout_fraction = " << fmt_double(dataset.holdout_fraction) << "\n";
  out << "k = " << dataset.k << "\n";
  out << "hash_dim = " << dataset.hash_dim << "\n";
  out << "\n[model]\n";
  out << "d1 = " << model.d1 << "\n";
  out << "heads = " << model.heads << "\n";
  out << "layers = " << model.layers << "\n";
  out << "ff_dim = " << model.ff_dim << "\n";
  out << "pooling = " << quote(model.pooling) << "\n";
  out << "vae_hidden = " << model.vae_hidden << "\n";
  out << "vae_latent = " << model.vae_latent << "\n";
  out << "d2 = " << model.d2 << "\n";
  out << "scorer_hidden = " << model.scorer_hidden << "\n";
  out << "r_size = " << model.r_size << "\n";
  out << "n_top = " << model.n_top << "\n";
  out << "loss_mode = " << quote(model.loss_mode) << "\n";
  out << "beta = " << fmt_double(model.beta) << "\n";
  out << "\n[train]\n";
  out << "lr = " << fmt_double(train.lr) << "\n";
  out << "epochs = " << train.epochs << "\n";
  out << "vae_epochs = " << train.vae_epochs << "\n";
  out << "m2_epochs = " << train.m2_epochs << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "seed = " << train.seed << "\n";
  std::string ks;
  for (size_t i = 0; i < train.ks.size(); ++i)
    ks += (i ? "," : "") + std::to_string(train.ks[i]);
  out << "ks = " << quote(ks) << "\n";
  out << "\n[synth]\n";
  out << "scenario = " << quote(synth.scenario) << "\n";
  out << "num_users = " << synth.num_users << "\n";
  out << "num_categories = " << synth.num_categories << "\n";
  out << "num_archetypes = " << synth.num_archetypes << "\n";
  out << "items_per_category = " << synth.items_per_category << "\n";
  out << "past_groups = " << synth.past_groups << "\n";
  out << "future_steps = " << synth.future_steps << "\n";
  out << "min_items_per_group = " << synth.min_items_per_group << "\n";
  out << "max_items_per_group = " << synth.max_items_per_group << "\n";
  out << "outcome_prob = " << fmt_double(synth.outcome_prob) << "\n";
  out << "popular_prob = " << fmt_double(synth.popular_prob) << "\n";
  out << "seed = " << synth.seed << "\n";
  out << "cutoff_ts = " << synth.cutoff_ts << "\n";
  return out.str();
}

uint64_t RunConfig::hash() const { return fnv1a64(serialize()); }

data::SplitPolicy RunConfig::split_policy() const {
  data::SplitPolicy p;
  p.kind = dataset.split == "cutoff" ? data::SplitKind::Cutoff : data::SplitKind::LeaveLast;
  p.cutoff_ts = dataset.cutoff_ts;
  p.leave_n = dataset.leave_n;
  p.max_past = dataset.max_past;
  p.max_future = dataset.max_future;
  p.cap_unit = dataset.cap_unit == "events" ? data::CapUnit::Events : data::CapUnit::Groups;
  p.holdout_fraction = dataset.holdout_fraction;
  p.holdout_seed = train.seed;
  p.window_days = dataset.window_days;
  return p;
}

M1Config RunConfig::m1_config(size_t num_categories, size_t group_latent) const {
  M1Config c;
  c.num_categories = num_categories;
  c.d1 = model.d1;
  c.heads = model.heads;
  c.layers = model.layers;
  c.ff_dim = model.ff_dim;
  c.k = dataset.k;
  c.pooling = model.pooling == "last" ? nn::Pooling::Last : nn::Pooling::Mean;
  c.group_latent = group_latent;
  return c;
}

VAEConfig RunConfig::vae_config(size_t num_categories) const {
  VAEConfig c;
  c.input_dim = dataset.hash_dim + num_categories;  // f is empty for these sources
  c.hidden = model.vae_hidden;
  c.latent = model.vae_latent;
  return c;
}

M2Config RunConfig::m2_config(size_t num_categories) const {
  M2Config c;
  c.num_categories = num_categories;
  c.d2 = model.d2;
  c.latent = model.vae_latent;
  c.scorer_hidden = model.scorer_hidden;
  c.mode = loss_mode();
  return c;
}

LossMode RunConfig::loss_mode() const {
  if (model.loss_mode == "literal") return LossMode::Literal;
  if (model.loss_mode == "weighted_mse") return LossMode::WeightedMse;
  return LossMode::WeightedScore;
}

}  // namespace ccrec
