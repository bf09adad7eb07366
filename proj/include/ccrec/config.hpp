#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccrec/data.hpp"
#include "ccrec/m2_model.hpp"
#include "ccrec/mle_model.hpp"
#include "ccrec/synth.hpp"
#include "ccrec/vae_model.hpp"

namespace ccrec {

// Run configuration, loaded from a small TOML-style file with [dataset],
// [model], [train] and [synth] sections. Unknown keys are errors.
struct RunConfig {
  struct Dataset {
    std::string source_kind = "canonical";  // canonical|retailrocket|tmall|synth
    std::string path;                        // canonical / tmall input
    std::string events_path;                 // retailrocket events CSV
    std::vector<std::string> property_paths; // retailrocket item properties
    std::string tmall_user_col = "user_id";
    std::string tmall_item_col = "item_id";
    std::string tmall_cat_col = "cat_id";
    std::string tmall_time_col = "time_stamp";
    double window_days = 5.0;
    std::string split = "leave_last";  // leave_last | cutoff
    int64_t cutoff_ts = 0;
    size_t leave_n = 1;
    size_t max_past = 0;
    size_t max_future = 0;
    std::string cap_unit = "groups";  // groups | events
    double holdout_fraction = 0.2;
    size_t k = 10;
    size_t hash_dim = 512;

    bool operator==(const Dataset&) const = default;
  } dataset;

  struct Model {
    size_t d1 = 64;
    size_t heads = 2;
    size_t layers = 1;
    size_t ff_dim = 256;
    std::string pooling = "mean";  // mean | last
    size_t vae_hidden = 256;
    size_t vae_latent = 256;
    size_t d2 = 64;
    size_t scorer_hidden = 128;
    size_t r_size = 10;
    size_t n_top = 5;  // length of the final ranked list
    std::string loss_mode = "weighted_score";
    double beta = 1.0;

    bool operator==(const Model&) const = default;
  } model;

  struct Train {
    double lr = 0.0001;
    size_t epochs = 100;       // first-stage model
    size_t vae_epochs = 100;
    size_t m2_epochs = 100;
    size_t batch_size = 256;
    uint64_t seed = 1;
    std::vector<int> ks = {1, 3, 5};

    bool operator==(const Train&) const = default;
  } train;

  synth::SyntheticSpec synth;

  bool operator==(const RunConfig& other) const;

  void validate() const;
  std::string serialize() const;
  uint64_t hash() const;

  data::SplitPolicy split_policy() const;
  M1Config m1_config(size_t num_categories, size_t group_latent) const;
  VAEConfig vae_config(size_t num_categories) const;
  M2Config m2_config(size_t num_categories) const;
  LossMode loss_mode() const;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text, const std::string& origin);
};

}  // namespace ccrec
