#include "ccrec/stages.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccrec/adam.hpp"
#include "ccrec/checkpoint.hpp"
#include "ccrec/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace ccrec::stages {

using nlohmann::json;

namespace {

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) throw PrereqError(hint + " (missing " + path + ")");
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// --- artifact layout -------------------------------------------------------

std::string p_data(const std::string& out) { return out + "/data"; }
std::string p_canonical(const std::string& out) { return p_data(out) + "/canonical.tsv"; }
std::string p_vocab(const std::string& out) { return p_data(out) + "/vocab.json"; }
std::string p_train(const std::string& out) { return p_data(out) + "/train.jsonl"; }
std::string p_test(const std::string& out) { return p_data(out) + "/test.jsonl"; }
std::string p_stats(const std::string& out) { return p_data(out) + "/stats.json"; }
std::string p_mle_dir(const std::string& out, const std::string& v) { return out + "/mle/" + v; }
std::string p_mle_model(const std::string& out, const std::string& v) {
  return p_mle_dir(out, v) + "/model";
}
std::string p_candidates(const std::string& out, const std::string& split) {
  return p_mle_dir(out, "mle") + "/candidates_" + split + ".jsonl";
}
std::string p_vae_dir(const std::string& out) { return out + "/vae"; }
std::string p_vae_model(const std::string& out) { return p_vae_dir(out) + "/model"; }
std::string p_embeddings(const std::string& out) { return p_vae_dir(out) + "/embeddings"; }
std::string p_embedding_index(const std::string& out) {
  return p_vae_dir(out) + "/embeddings_index.json";
}
std::string p_m2_dir(const std::string& out, const std::string& v) { return out + "/m2/" + v; }
std::string p_m2_model(const std::string& out, const std::string& v) {
  return p_m2_dir(out, v) + "/model";
}
std::string p_eval_dir(const std::string& out, const std::string& v) {
  return out + "/eval/" + v;
}

// --- shared loading --------------------------------------------------------

std::vector<data::UserExample> load_split(const std::string& out, const std::string& split) {
  std::string path = split == "train" ? p_train(out) : p_test(out);
  require_file(path, "run prepare first");
  return data::read_examples(path);
}

data::Vocabulary load_vocab_checked(const std::string& out) {
  require_file(p_vocab(out), "run prepare first");
  return data::load_vocab(p_vocab(out));
}

std::string group_key(const std::string& user, int32_t category, int64_t window_start) {
  return user + "|" + std::to_string(category) + "|" + std::to_string(window_start);
}

// Per-group embedding rows plus the key -> row lookup.
struct EmbeddingTable {
  size_t latent = 0;
  nn::Tensor<float> rows;
  std::unordered_map<std::string, size_t> index;

  const float* row(const std::string& key) const {
    auto it = index.find(key);
    if (it == index.end()) throw ContractError("no embedding for group " + key);
    return &rows.data[it->second * latent];
  }
};

EmbeddingTable load_embeddings(const std::string& out) {
  require_file(p_embeddings(out) + ".json", "run train_vae first");
  require_file(p_embedding_index(out), "run train_vae first");
  EmbeddingTable table;
  for (auto& [name, tensor] : nn::load_tensor_container(p_embeddings(out))) {
    if (name == "embeddings") table.rows = std::move(tensor);
  }
  if (table.rows.size() == 0) throw ContractError("embedding container has no embeddings tensor");
  std::ifstream in(p_embedding_index(out), std::ios::binary);
  if (!in) throw IoError("cannot open " + p_embedding_index(out));
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("invalid JSON in " + p_embedding_index(out));
  table.latent = j.at("latent").get<size_t>();
  const auto& keys = j.at("keys");
  if (table.latent == 0 || table.rows.size() != keys.size() * table.latent)
    throw ContractError("embedding index does not match embedding rows");
  size_t r = 0;
  for (const auto& k : keys) table.index.emplace(k.get<std::string>(), r++);
  return table;
}

// --- candidate lists -------------------------------------------------------

struct UserCandidates {
  std::vector<int32_t> cand;
  std::vector<double> y_m1;
};

void write_candidates(const std::string& path, const std::vector<data::UserExample>& examples,
                      const std::vector<UserCandidates>& lists) {
  std::ofstream out = open_out(path);
  for (size_t i = 0; i < examples.size(); ++i) {
    json j;
    j["user"] = examples[i].user;
    j["cand"] = lists[i].cand;
    j["y_m1"] = lists[i].y_m1;
    out << j.dump() << "\n";
  }
}

std::unordered_map<std::string, UserCandidates> read_candidates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::unordered_map<std::string, UserCandidates> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError(path + ":" + std::to_string(lineno) + ": invalid JSON");
    UserCandidates uc;
    uc.cand = j.at("cand").get<std::vector<int32_t>>();
    uc.y_m1 = j.at("y_m1").get<std::vector<double>>();
    if (uc.cand.size() != uc.y_m1.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": cand/y_m1 misaligned");
    if (!out.emplace(j.at("user").get<std::string>(), std::move(uc)).second)
      throw DataError(path + ":" + std::to_string(lineno) + ": duplicate user");
  }
  return out;
}

// --- first-stage model helpers ---------------------------------------------

// Latent rows aligned with the positions encode_window produces: the most
// recent k history entries, left-padded; only known-category positions (the
// unmasked ones) receive their group's embedding row.
nn::Tensor<float> build_m1_latents(const std::vector<data::UserExample>& examples,
                                   size_t first, size_t count, size_t k,
                                   const EmbeddingTable& table) {
  nn::Tensor<float> out({count, k, table.latent});
  for (size_t b = 0; b < count; ++b) {
    const data::UserExample& e = examples[first + b];
    size_t m = e.delta.size();
    size_t start = m > k ? m - k : 0;
    size_t pad = k - (m - start);
    size_t gi = 0;
    for (size_t j = 0; j < start; ++j)
      if (e.delta[j] != 0) ++gi;
    for (size_t j = start; j < m; ++j) {
      if (e.delta[j] == 0) continue;
      if (gi >= e.groups.size()) throw ContractError("history/group records misaligned");
      const data::GroupRecord& g = e.groups[gi++];
      const float* src = table.row(group_key(e.user, g.category, g.window_start));
      std::copy(src, src + table.latent, &out.at(b, pad + (j - start), 0));
    }
  }
  return out;
}

std::vector<std::vector<int32_t>> gather_targets(const std::vector<data::UserExample>& examples,
                                                 size_t first, size_t count) {
  std::vector<std::vector<int32_t>> t(count);
  for (size_t b = 0; b < count; ++b) t[b] = examples[first + b].gamma;
  return t;
}

// Chunked inference: per-example probability rows over all categories.
std::vector<std::vector<double>> m1_probabilities(const M1Model<float>& model,
                                                  const std::vector<data::UserExample>& examples,
                                                  size_t batch_size, size_t k,
                                                  const EmbeddingTable* table) {
  std::vector<std::vector<double>> probs;
  probs.reserve(examples.size());
  for (size_t first = 0; first < examples.size(); first += batch_size) {
    size_t count = std::min(batch_size, examples.size() - first);
    nn::SeqBatch batch = data::encode_window(examples, first, count, k);
    nn::Tensor<float> latents;
    if (table) latents = build_m1_latents(examples, first, count, k, *table);
    typename M1Model<float>::Cache cache;
    nn::Tensor<float> logp = model.forward(batch, table ? &latents : nullptr, cache);
    for (size_t b = 0; b < count; ++b) {
      std::vector<double> row(model.cfg.num_categories);
      for (size_t c = 0; c < row.size(); ++c)
        row[c] = std::exp(static_cast<double>(logp.at(b, c)));
      probs.push_back(std::move(row));
    }
  }
  return probs;
}

// --- re-ranker batch assembly ----------------------------------------------

// Per-example pieces that stay fixed across epochs. group_rows entries are
// embedding rows, or nullptr for an all-zero latent.
struct M2Source {
  std::vector<const float*> group_rows;
  std::vector<int32_t> delta;
  std::vector<int32_t> cand;
  std::vector<float> y_m1;
  std::vector<float> y_true;
};

std::vector<M2Source> build_m2_sources(
    const std::vector<data::UserExample>& examples,
    const std::unordered_map<std::string, UserCandidates>& candidates, size_t k,
    const EmbeddingTable* table, bool with_truth) {
  std::vector<M2Source> out;
  out.reserve(examples.size());
  for (const data::UserExample& e : examples) {
    auto it = candidates.find(e.user);
    if (it == candidates.end()) throw ContractError("no candidate list for user " + e.user);
    M2Source s;
    if (table) {
      for (const data::GroupRecord& g : e.groups)
        s.group_rows.push_back(table->row(group_key(e.user, g.category, g.window_start)));
    } else {
      s.group_rows.push_back(nullptr);
    }
    for (int32_t d : e.delta)
      if (d != 0) s.delta.push_back(d);
    if (s.delta.size() > k) s.delta.erase(s.delta.begin(), s.delta.end() - k);
    s.cand = it->second.cand;
    s.y_m1.assign(it->second.y_m1.begin(), it->second.y_m1.end());
    if (with_truth) {
      s.y_true.reserve(s.cand.size());
      for (int32_t c : s.cand)
        s.y_true.push_back(
            std::binary_search(e.gamma.begin(), e.gamma.end(), c) ? 1.0f : 0.0f);
    }
    out.push_back(std::move(s));
  }
  return out;
}

M2Batch<float> assemble_m2_batch(const std::vector<M2Source>& sources,
                                 const std::vector<size_t>& order, size_t first,
                                 size_t count, size_t latent_dim) {
  M2Batch<float> b;
  b.latent_dim = latent_dim;
  b.group_offset.push_back(0);
  b.delta_offset.push_back(0);
  b.cand_offset.push_back(0);
  for (size_t i = first; i < first + count; ++i) {
    const M2Source& s = sources[order[i]];
    for (const float* row : s.group_rows) {
      if (row)
        b.latents.insert(b.latents.end(), row, row + latent_dim);
      else
        b.latents.insert(b.latents.end(), latent_dim, 0.0f);
    }
    b.group_offset.push_back(b.latents.size() / latent_dim);
    b.delta.insert(b.delta.end(), s.delta.begin(), s.delta.end());
    b.delta_offset.push_back(b.delta.size());
    b.cand.insert(b.cand.end(), s.cand.begin(), s.cand.end());
    b.cand_offset.push_back(b.cand.size());
    b.y_m1.insert(b.y_m1.end(), s.y_m1.begin(), s.y_m1.end());
    if (!s.y_true.empty()) b.y_true.insert(b.y_true.end(), s.y_true.begin(), s.y_true.end());
  }
  return b;
}

std::vector<size_t> identity_order(size_t n) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  return order;
}

// --- predictions -----------------------------------------------------------

void write_prediction_rows(std::ofstream& out, const std::string& user,
                           const std::vector<int32_t>& categories,
                           const std::vector<double>& scores) {
  for (size_t i = 0; i < categories.size(); ++i) {
    out << user << '\t' << (i + 1) << '\t' << categories[i] << '\t'
        << fmt_double(scores[i]) << '\n';
  }
}

void finish_evaluation(const RunConfig& cfg, const std::string& out,
                       const std::string& variant) {
  std::string dir = p_eval_dir(out, variant);
  metrics::MetricReport report =
      metrics::evaluate_run(dir + "/predictions.tsv", p_test(out), cfg.train.ks,
                            dir + "/report.json", dir + "/report.txt");
  std::printf("evaluate[%s]:\n%s", variant.c_str(),
              metrics::render_report_text(report).c_str());
}

}  // namespace

// --- manifest ---------------------------------------------------------------

std::string default_out_dir(const RunConfig& cfg) { return "runs/" + hex16(cfg.hash()); }

void write_manifest(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  open_out(out_dir + "/config.toml") << cfg.serialize();
  json j;
  j["config_hash"] = hex16(cfg.hash());
  j["seed"] = cfg.train.seed;
  open_out(out_dir + "/manifest.json") << j.dump(2) << "\n";
}

// --- synth -------------------------------------------------------------------

void run_synth(const RunConfig& cfg, const std::string& out_dir) {
  cfg.synth.validate();
  ensure_dir(out_dir + "/synth");
  synth::SynthResult result = synth::synth_generate(cfg.synth);
  synth::write_synth(out_dir + "/synth/interactions.tsv", out_dir + "/synth/truth.json",
                     result, cfg.synth);
  std::printf("synth: %zu interactions for %zu users\n", result.rows.size(),
              result.archetype_of.size());
}

// --- prepare -----------------------------------------------------------------

void run_prepare(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  ensure_dir(p_data(out_dir));

  data::IngestStats ingest;
  std::vector<data::Interaction> rows;
  const std::string& kind = cfg.dataset.source_kind;
  if (kind == "synth") {
    run_synth(cfg, out_dir);
    synth::SynthResult result = synth::synth_generate(cfg.synth);
    rows = std::move(result.rows);
    ingest.rows_read = rows.size();
  } else if (kind == "canonical") {
    rows = data::ingest_canonical(cfg.dataset.path, ingest);
  } else if (kind == "retailrocket") {
    rows = data::ingest_retailrocket(cfg.dataset.events_path, cfg.dataset.property_paths,
                                     ingest);
  } else if (kind == "tmall") {
    data::TmallColumns cols;
    cols.user = cfg.dataset.tmall_user_col;
    cols.item = cfg.dataset.tmall_item_col;
    cols.category = cfg.dataset.tmall_cat_col;
    cols.time = cfg.dataset.tmall_time_col;
    rows = data::ingest_tmall(cfg.dataset.path, cols, ingest);
  } else {
    throw ConfigError("unknown source_kind " + kind);
  }
  if (rows.empty()) throw DataError("no usable interactions in input");
  data::sort_interactions(rows);
  data::write_canonical(p_canonical(out_dir), rows);

  data::SplitResult split = data::split_examples(rows, cfg.split_policy());
  if (!split.stats.audit_ok)
    throw ContractError("past/future leakage detected: " +
                        std::to_string(split.stats.leakage_violations) + " violations");
  if (split.train.empty()) throw DataError("training split is empty");
  if (split.test.empty()) throw DataError("test split is empty");

  data::Vocabulary vocab = data::build_vocab(split.train, cfg.dataset.hash_dim);
  if (vocab.num_categories() == 0) throw DataError("no categories in training split");
  data::save_vocab(p_vocab(out_dir), vocab);

  data::CanonStats train_stats, test_stats;
  std::vector<data::UserExample> train = data::canonicalize(split.train, vocab, train_stats);
  std::vector<data::UserExample> test = data::canonicalize(split.test, vocab, test_stats);
  if (train.empty()) throw DataError("no training examples survive canonicalization");
  if (test.empty()) throw DataError("no test examples survive canonicalization");
  data::write_examples(p_train(out_dir), train);
  data::write_examples(p_test(out_dir), test);

  auto canon_json = [](const data::CanonStats& s, size_t examples) {
    json j;
    j["examples"] = examples;
    j["unknown_past"] = s.unknown_past;
    j["unknown_future"] = s.unknown_future;
    j["dropped_no_known_past"] = s.dropped_no_known_past;
    j["dropped_empty_gamma"] = s.dropped_empty_gamma;
    return j;
  };
  json stats;
  stats["ingest"] = {{"rows_read", ingest.rows_read},
                     {"malformed", ingest.malformed},
                     {"unmapped", ingest.unmapped}};
  stats["split"] = {{"users_total", split.stats.users_total},
                    {"users_dropped_no_past", split.stats.users_dropped_no_past},
                    {"users_dropped_no_future", split.stats.users_dropped_no_future},
                    {"leakage_violations", split.stats.leakage_violations},
                    {"audit_ok", split.stats.audit_ok}};
  stats["train"] = canon_json(train_stats, train.size());
  stats["test"] = canon_json(test_stats, test.size());
  stats["num_categories"] = vocab.num_categories();
  open_out(p_stats(out_dir)) << stats.dump(2) << "\n";

  std::printf("prepare: %zu train / %zu test examples, %zu categories\n", train.size(),
              test.size(), vocab.num_categories());
}

// --- train_mle ---------------------------------------------------------------

void run_train_mle(const RunConfig& cfg, const std::string& out_dir,
                   const std::string& variant) {
  if (variant != "mle" && variant != "mle_vae")
    throw ConfigError("train_mle variant must be mle or mle_vae");
  cfg.validate();
  data::Vocabulary vocab = load_vocab_checked(out_dir);
  std::vector<data::UserExample> train = load_split(out_dir, "train");

  EmbeddingTable table;
  bool with_latents = variant == "mle_vae";
  if (with_latents) {
    table = load_embeddings(out_dir);
    if (table.latent != cfg.model.vae_latent)
      throw ContractError("embedding width does not match configured latent size");
  }

  M1Config mcfg = cfg.m1_config(vocab.num_categories(), with_latents ? table.latent : 0);
  Rng root(cfg.train.seed);
  M1Model<float> model(mcfg, root);
  auto params = model.params();
  nn::Adam<float> opt(static_cast<float>(cfg.train.lr));
  opt.bind(params);

  ensure_dir(p_mle_dir(out_dir, variant));
  std::ofstream log = open_out(p_mle_dir(out_dir, variant) + "/train_log.txt");
  size_t k = cfg.dataset.k;
  size_t bs = cfg.train.batch_size;
  double last_mean = 0.0;
  std::vector<size_t> order = identity_order(train.size());
  std::vector<data::UserExample> mb;
  for (size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    Rng erng = root.fork(1000 + epoch);
    erng.shuffle(order);
    double total = 0.0;
    for (size_t first = 0; first < train.size(); first += bs) {
      size_t count = std::min(bs, train.size() - first);
      mb.clear();
      for (size_t i = first; i < first + count; ++i) mb.push_back(train[order[i]]);
      nn::SeqBatch batch = data::encode_window(mb, 0, count, k);
      nn::Tensor<float> latents;
      if (with_latents) latents = build_m1_latents(mb, 0, count, k, table);
      typename M1Model<float>::Cache cache;
      nn::Tensor<float> logp = model.forward(batch, with_latents ? &latents : nullptr, cache);
      nn::Tensor<float> dlogp;
      total += static_cast<double>(model.loss_mle(logp, gather_targets(mb, 0, count), &dlogp));
      for (auto* p : params) p->zero_grad();
      model.backward(cache, dlogp);
      opt.step(params);
    }
    last_mean = total / static_cast<double>(train.size());
    char line[64];
    std::snprintf(line, sizeof line, "epoch %zu loss %.6f\n", epoch + 1, last_mean);
    log << line;
  }
  nn::save_params(p_mle_model(out_dir, variant), params);
  std::printf("train_mle[%s]: %zu epochs, mean loss %.6f\n", variant.c_str(),
              cfg.train.epochs, last_mean);

  if (variant == "mle") export_candidate_lists(cfg, out_dir);
}

// Reloads the trained first stage and writes candidate lists of length
// r_size for both splits. Separate from training so sweeps can re-export at
// other lengths without retraining.
void export_candidate_lists(const RunConfig& cfg, const std::string& out_dir) {
  data::Vocabulary vocab = load_vocab_checked(out_dir);
  require_file(p_mle_model(out_dir, "mle") + ".json", "run train_mle first");
  M1Config mcfg = cfg.m1_config(vocab.num_categories(), 0);
  Rng root(cfg.train.seed);
  M1Model<float> model(mcfg, root);
  auto params = model.params();
  nn::load_params(p_mle_model(out_dir, "mle"), params);
  for (const char* split : {"train", "test"}) {
    std::vector<data::UserExample> examples = load_split(out_dir, split);
    std::vector<std::vector<double>> probs =
        m1_probabilities(model, examples, cfg.train.batch_size, cfg.dataset.k, nullptr);
    std::vector<UserCandidates> lists(examples.size());
    for (size_t i = 0; i < examples.size(); ++i) {
      CandidateList c =
          generate_candidates(probs[i], cfg.model.r_size, CandidateSampling::Top, nullptr);
      lists[i] = {std::move(c.r), std::move(c.p)};
    }
    write_candidates(p_candidates(out_dir, split), examples, lists);
  }
}

// --- train_vae ---------------------------------------------------------------

namespace {

// One input row per group record; rows gathered across the given examples.
struct VaeRows {
  nn::Tensor<float> x;                  // [n x input_dim]
  std::vector<std::string> keys;        // aligned with rows
};

VaeRows build_vae_rows(const std::vector<data::UserExample>& examples, size_t feature_dim,
                       size_t hash_dim, size_t num_categories,
                       std::unordered_map<std::string, size_t>* dedupe) {
  size_t input_dim = feature_dim + hash_dim + num_categories;
  VaeRows out;
  std::vector<const data::GroupRecord*> records;
  std::vector<const data::UserExample*> owners;
  for (const data::UserExample& e : examples) {
    if (e.f.size() != feature_dim)
      throw DataError("inconsistent feature width across examples");
    for (const data::GroupRecord& g : e.groups) {
      std::string key = group_key(e.user, g.category, g.window_start);
      if (dedupe) {
        if (dedupe->count(key)) continue;
        dedupe->emplace(key, records.size());
      }
      records.push_back(&g);
      owners.push_back(&e);
      out.keys.push_back(std::move(key));
    }
  }
  out.x = nn::Tensor<float>({records.size(), input_dim});
  for (size_t r = 0; r < records.size(); ++r)
    fill_vae_input(&out.x.at(r, 0), owners[r]->f, records[r]->profile_nonzeros,
                   records[r]->category, hash_dim, num_categories);
  return out;
}

}  // namespace

void run_train_vae(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  data::Vocabulary vocab = load_vocab_checked(out_dir);
  std::vector<data::UserExample> train = load_split(out_dir, "train");
  std::vector<data::UserExample> test = load_split(out_dir, "test");

  size_t C = vocab.num_categories();
  size_t feature_dim = train.front().f.size();
  VAEConfig vcfg = cfg.vae_config(C);
  vcfg.input_dim = feature_dim + cfg.dataset.hash_dim + C;

  VaeRows rows = build_vae_rows(train, feature_dim, cfg.dataset.hash_dim, C, nullptr);
  size_t n = rows.x.rows();
  if (n == 0) throw DataError("no groups to train the encoder on");

  Rng root(cfg.train.seed);
  VAEModel<float> model(vcfg, root);
  auto params = model.params();
  nn::Adam<float> opt(static_cast<float>(cfg.train.lr));
  opt.bind(params);

  ensure_dir(p_vae_dir(out_dir));
  std::ofstream log = open_out(p_vae_dir(out_dir) + "/train_log.txt");
  size_t bs = cfg.train.batch_size;
  size_t input_dim = vcfg.input_dim;
  float beta = static_cast<float>(cfg.model.beta);
  double last_mean = 0.0;
  std::vector<size_t> order = identity_order(n);
  for (size_t epoch = 0; epoch < cfg.train.vae_epochs; ++epoch) {
    Rng erng = root.fork(2000 + epoch);
    erng.shuffle(order);
    double total = 0.0;
    for (size_t first = 0; first < n; first += bs) {
      size_t count = std::min(bs, n - first);
      nn::Tensor<float> x({count, input_dim});
      for (size_t i = 0; i < count; ++i)
        std::copy(&rows.x.at(order[first + i], 0), &rows.x.at(order[first + i], 0) + input_dim,
                  &x.at(i, 0));
      nn::Tensor<float> eps({count, vcfg.latent});
      for (float& v : eps.data) v = static_cast<float>(erng.normal());
      typename VAEModel<float>::Cache cache;
      for (auto* p : params) p->zero_grad();
      total += static_cast<double>(model.loss_and_grad(x, eps, beta, cache, true));
      opt.step(params);
    }
    last_mean = total / static_cast<double>(n);
    char line[64];
    std::snprintf(line, sizeof line, "epoch %zu loss %.6f\n", epoch + 1, last_mean);
    log << line;
  }
  nn::save_params(p_vae_model(out_dir), params);

  // Embed every train/test group with noise-free inference.
  std::unordered_map<std::string, size_t> dedupe;
  std::vector<data::UserExample> all = std::move(train);
  all.insert(all.end(), std::make_move_iterator(test.begin()),
             std::make_move_iterator(test.end()));
  VaeRows every = build_vae_rows(all, feature_dim, cfg.dataset.hash_dim, C, &dedupe);
  size_t m = every.x.rows();
  nn::Tensor<float> mu({m, vcfg.latent});
  for (size_t first = 0; first < m; first += 1024) {
    size_t count = std::min<size_t>(1024, m - first);
    nn::Tensor<float> x({count, input_dim});
    std::copy(&every.x.at(first, 0), &every.x.at(first, 0) + count * input_dim, &x.at(0, 0));
    nn::Tensor<float> chunk = model.encode_mu(x);
    std::copy(chunk.data.begin(), chunk.data.end(), &mu.at(first, 0));
  }
  nn::save_tensor_container(p_embeddings(out_dir), {{"embeddings", &mu}});
  json idx;
  idx["latent"] = vcfg.latent;
  idx["keys"] = every.keys;
  open_out(p_embedding_index(out_dir)) << idx.dump(2) << "\n";

  std::printf("train_vae: %zu epochs over %zu groups, mean loss %.6f; embedded %zu groups\n",
              cfg.train.vae_epochs, n, last_mean, m);
}

// --- train_ccrec -------------------------------------------------------------

void run_train_ccrec(const RunConfig& cfg, const std::string& out_dir,
                     const std::string& variant) {
  if (variant != "ccrec" && variant != "mle_cascading")
    throw ConfigError("train_ccrec variant must be ccrec or mle_cascading");
  cfg.validate();
  data::Vocabulary vocab = load_vocab_checked(out_dir);
  std::vector<data::UserExample> train = load_split(out_dir, "train");
  require_file(p_candidates(out_dir, "train"), "run train_mle first");
  auto candidates = read_candidates(p_candidates(out_dir, "train"));

  EmbeddingTable table;
  bool with_latents = variant == "ccrec";
  if (with_latents) {
    table = load_embeddings(out_dir);
    if (table.latent != cfg.model.vae_latent)
      throw ContractError("embedding width does not match configured latent size");
  }

  M2Config mcfg = cfg.m2_config(vocab.num_categories());
  Rng root(cfg.train.seed);
  M2Model<float> model(mcfg, root);
  auto params = model.params();
  nn::Adam<float> opt(static_cast<float>(cfg.train.lr));
  opt.bind(params);

  std::vector<M2Source> sources = build_m2_sources(
      train, candidates, cfg.dataset.k, with_latents ? &table : nullptr, true);

  ensure_dir(p_m2_dir(out_dir, variant));
  std::ofstream log = open_out(p_m2_dir(out_dir, variant) + "/train_log.txt");
  size_t bs = cfg.train.batch_size;
  double last_mean = 0.0;
  std::vector<size_t> order = identity_order(sources.size());
  for (size_t epoch = 0; epoch < cfg.train.m2_epochs; ++epoch) {
    Rng erng = root.fork(3000 + epoch);
    erng.shuffle(order);
    double total = 0.0;
    for (size_t first = 0; first < sources.size(); first += bs) {
      size_t count = std::min(bs, sources.size() - first);
      M2Batch<float> batch = assemble_m2_batch(sources, order, first, count, mcfg.latent);
      typename M2Model<float>::Cache cache;
      nn::Tensor<float> scores = model.forward(batch, cache);
      nn::Tensor<float> dscores;
      total += static_cast<double>(m2_loss(batch, scores, mcfg.mode, &dscores));
      for (auto* p : params) p->zero_grad();
      model.backward(cache, dscores);
      opt.step(params);
    }
    last_mean = total / static_cast<double>(sources.size());
    char line[64];
    std::snprintf(line, sizeof line, "epoch %zu loss %.6f\n", epoch + 1, last_mean);
    log << line;
  }
  nn::save_params(p_m2_model(out_dir, variant), params);
  std::printf("train_ccrec[%s]: %zu epochs, mean loss %.6f\n", variant.c_str(),
              cfg.train.m2_epochs, last_mean);
}

// --- evaluate ----------------------------------------------------------------

void run_evaluate(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& variant) {
  cfg.validate();
  data::Vocabulary vocab = load_vocab_checked(out_dir);
  std::vector<data::UserExample> test = load_split(out_dir, "test");
  ensure_dir(p_eval_dir(out_dir, variant));
  std::ofstream pred = open_out(p_eval_dir(out_dir, variant) + "/predictions.tsv");

  if (variant == "mle" || variant == "mle_vae") {
    EmbeddingTable table;
    bool with_latents = variant == "mle_vae";
    if (with_latents) table = load_embeddings(out_dir);
    require_file(p_mle_model(out_dir, variant) + ".json", "run train_mle first");
    M1Config mcfg = cfg.m1_config(vocab.num_categories(), with_latents ? table.latent : 0);
    Rng root(cfg.train.seed);
    M1Model<float> model(mcfg, root);
    auto params = model.params();
    nn::load_params(p_mle_model(out_dir, variant), params);
    std::vector<std::vector<double>> probs = m1_probabilities(
        model, test, cfg.train.batch_size, cfg.dataset.k, with_latents ? &table : nullptr);
    for (size_t i = 0; i < test.size(); ++i) {
      CandidateList top =
          generate_candidates(probs[i], cfg.model.n_top, CandidateSampling::Top, nullptr);
      write_prediction_rows(pred, test[i].user, top.r, top.p);
    }
  } else if (variant == "ccrec" || variant == "mle_cascading") {
    require_file(p_candidates(out_dir, "test"), "run train_mle first");
    auto candidates = read_candidates(p_candidates(out_dir, "test"));
    EmbeddingTable table;
    bool with_latents = variant == "ccrec";
    if (with_latents) table = load_embeddings(out_dir);
    require_file(p_m2_model(out_dir, variant) + ".json", "run train_ccrec first");
    M2Config mcfg = cfg.m2_config(vocab.num_categories());
    Rng root(cfg.train.seed);
    M2Model<float> model(mcfg, root);
    auto params = model.params();
    nn::load_params(p_m2_model(out_dir, variant), params);

    std::vector<M2Source> sources = build_m2_sources(
        test, candidates, cfg.dataset.k, with_latents ? &table : nullptr, false);
    std::vector<size_t> order = identity_order(sources.size());
    size_t bs = cfg.train.batch_size;
    for (size_t first = 0; first < sources.size(); first += bs) {
      size_t count = std::min(bs, sources.size() - first);
      M2Batch<float> batch = assemble_m2_batch(sources, order, first, count, mcfg.latent);
      typename M2Model<float>::Cache cache;
      nn::Tensor<float> scores = model.forward(batch, cache);
      for (size_t b = 0; b < count; ++b) {
        const data::UserExample& e = test[first + b];
        const UserCandidates& uc = candidates.at(e.user);
        std::vector<double> y_m2;
        for (size_t r = batch.cand_offset[b]; r < batch.cand_offset[b + 1]; ++r)
          y_m2.push_back(static_cast<double>(scores.data[r]));
        RankedOutput ranked = rank_candidates(uc.cand, uc.y_m1, y_m2, cfg.model.n_top);
        write_prediction_rows(pred, e.user, ranked.categories, ranked.y_m2);
      }
    }
  } else {
    throw ConfigError("unknown variant " + variant);
  }
  pred.close();
  finish_evaluation(cfg, out_dir, variant);
}

// --- ablate ------------------------------------------------------------------

namespace {

// Per-r_size leg of a sweep: clone the shared artifacts into a scoped
// directory, re-export candidates at the new length, retrain and re-evaluate
// the cascading variants.
void run_sweep_leg(const RunConfig& cfg, const std::string& parent_out,
                   const std::string& leg_out, const std::vector<std::string>& variants) {
  ensure_dir(leg_out);
  std::error_code ec;
  const auto opts = fs::copy_options::recursive | fs::copy_options::overwrite_existing;
  fs::copy(p_data(parent_out), p_data(leg_out), opts, ec);
  if (ec) throw IoError("cannot clone data artifacts: " + ec.message());
  ensure_dir(p_mle_dir(leg_out, "mle"));
  for (const char* suffix : {".json", ".bin"}) {
    fs::copy_file(p_mle_model(parent_out, "mle") + suffix,
                  p_mle_model(leg_out, "mle") + suffix,
                  fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("cannot clone first-stage model: " + ec.message());
  }
  if (fs::exists(p_embeddings(parent_out) + ".json")) {
    fs::copy(p_vae_dir(parent_out), p_vae_dir(leg_out), opts, ec);
    if (ec) throw IoError("cannot clone embeddings: " + ec.message());
  }
  export_candidate_lists(cfg, leg_out);
  for (const std::string& v : variants) {
    run_train_ccrec(cfg, leg_out, v);
    run_evaluate(cfg, leg_out, v);
  }
}

}  // namespace

void run_ablate(const RunConfig& cfg, const std::string& out_dir,
                const std::vector<std::string>& variants,
                const std::vector<size_t>& r_sizes) {
  static const std::vector<std::string> known = {"mle", "mle_vae", "mle_cascading", "ccrec"};
  std::vector<std::string> vs = variants.empty() ? known : variants;
  std::vector<std::string> todo;
  for (const std::string& v : vs) {
    if (std::find(known.begin(), known.end(), v) == known.end())
      throw ConfigError("unknown variant " + v);
    if (std::find(todo.begin(), todo.end(), v) == todo.end()) todo.push_back(v);
  }
  auto wants = [&](const char* v) {
    return std::find(todo.begin(), todo.end(), v) != todo.end();
  };

  if (!fs::exists(p_train(out_dir))) run_prepare(cfg, out_dir);
  bool needs_mle = wants("mle") || wants("mle_cascading") || wants("ccrec");
  if (needs_mle && (!fs::exists(p_mle_model(out_dir, "mle") + ".json") ||
                    !fs::exists(p_candidates(out_dir, "test"))))
    run_train_mle(cfg, out_dir, "mle");
  if ((wants("mle_vae") || wants("ccrec")) && !fs::exists(p_embeddings(out_dir) + ".json"))
    run_train_vae(cfg, out_dir);
  if (wants("mle_vae") && !fs::exists(p_mle_model(out_dir, "mle_vae") + ".json"))
    run_train_mle(cfg, out_dir, "mle_vae");
  if (wants("mle_cascading") && !fs::exists(p_m2_model(out_dir, "mle_cascading") + ".json"))
    run_train_ccrec(cfg, out_dir, "mle_cascading");
  if (wants("ccrec") && !fs::exists(p_m2_model(out_dir, "ccrec") + ".json"))
    run_train_ccrec(cfg, out_dir, "ccrec");
  for (const std::string& v : todo) run_evaluate(cfg, out_dir, v);

  ensure_dir(out_dir + "/ablate");
  json summary;
  summary["order"] = todo;
  std::ostringstream text;
  char buf[64];
  text << "variant         ";
  for (int k : cfg.train.ks) {
    for (const char* m : {"HR@", "P@", "R@", "F1@"}) {
      std::snprintf(buf, sizeof buf, "%10s", (m + std::to_string(k)).c_str());
      text << buf;
    }
  }
  text << "     users  excluded\n";
  for (const std::string& v : todo) {
    metrics::MetricReport r =
        metrics::read_report_json(p_eval_dir(out_dir, v) + "/report.json");
    json jk;
    for (const auto& [k, km] : r.at_k)
      jk[std::to_string(k)] = {{"hr", km.hr},
                               {"precision", km.precision},
                               {"recall", km.recall},
                               {"f1", km.f1}};
    summary["variants"][v] = {{"users", r.users}, {"excluded", r.excluded}, {"k", jk}};
    std::snprintf(buf, sizeof buf, "%-16s", v.c_str());
    text << buf;
    for (int k : cfg.train.ks) {
      const metrics::KMetrics& km = r.at_k.at(k);
      std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f%10.4f", km.hr, km.precision,
                    km.recall, km.f1);
      text << buf;
    }
    std::snprintf(buf, sizeof buf, "%10zu%10zu\n", r.users, r.excluded);
    text << buf;
  }
  open_out(out_dir + "/ablate/summary.json") << summary.dump(2) << "\n";
  open_out(out_dir + "/ablate/summary.txt") << text.str();
  std::printf("ablate:\n%s", text.str().c_str());

  if (r_sizes.size() < 2) return;
  std::vector<size_t> rs = r_sizes;
  std::sort(rs.begin(), rs.end());
  rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
  std::vector<std::string> cascading;
  for (const std::string& v : todo)
    if (v == "mle_cascading" || v == "ccrec") cascading.push_back(v);
  if (cascading.empty()) throw ConfigError("r_size sweep needs a cascading variant");

  json sweep;
  sweep["r_sizes"] = rs;
  sweep["variants"] = cascading;
  std::ostringstream stext;
  stext << "r_size  ";
  for (const std::string& v : cascading) {
    for (int k : cfg.train.ks) {
      std::snprintf(buf, sizeof buf, "%16s",
                    (v.substr(0, 9) + " HR@" + std::to_string(k)).c_str());
      stext << buf;
    }
  }
  stext << "\n";
  for (size_t r : rs) {
    RunConfig leg_cfg = cfg;
    leg_cfg.model.r_size = r;
    std::string leg = out_dir + "/ablate/sweep/r" + std::to_string(r);
    run_sweep_leg(leg_cfg, out_dir, leg, cascading);
    std::snprintf(buf, sizeof buf, "%-8zu", r);
    stext << buf;
    for (const std::string& v : cascading) {
      metrics::MetricReport rep =
          metrics::read_report_json(p_eval_dir(leg, v) + "/report.json");
      json jk;
      for (const auto& [k, km] : rep.at_k)
        jk[std::to_string(k)] = {{"hr", km.hr},
                                 {"precision", km.precision},
                                 {"recall", km.recall},
                                 {"f1", km.f1}};
      sweep["by_r"][std::to_string(r)][v] = jk;
      for (int k : cfg.train.ks) {
        std::snprintf(buf, sizeof buf, "%16.4f", rep.at_k.at(k).hr);
        stext << buf;
      }
    }
    stext << "\n";
  }
  open_out(out_dir + "/ablate/sweep.json") << sweep.dump(2) << "\n";
  open_out(out_dir + "/ablate/sweep.txt") << stext.str();
  std::printf("r_size sweep:\n%s", stext.str().c_str());
}

}  // namespace ccrec::stages
