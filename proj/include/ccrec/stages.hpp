#pragma once

#include <string>
#include <vector>

#include "ccrec/config.hpp"

namespace ccrec::stages {

// Content-addressed run directory: runs/<16 hex digits of the config hash>.
std::string default_out_dir(const RunConfig& cfg);

// Creates the run directory and records the exact configuration in it
// (config.toml plus a small manifest.json with the hash and seed).
void write_manifest(const RunConfig& cfg, const std::string& out_dir);

// Generates the synthetic interaction log and its generating-truth sidecar
// under <out>/synth/.
void run_synth(const RunConfig& cfg, const std::string& out_dir);

// Ingests the configured source (generating synthetic data on the fly when
// source_kind = "synth"), writes the canonical TSV, splits past/future,
// builds the category vocabulary from the training split only and writes
// train/test example files plus a stats summary under <out>/data/.
void run_prepare(const RunConfig& cfg, const std::string& out_dir);

// Trains the sequence model that predicts the next category distribution.
// variant "mle" ranks on its own and additionally exports candidate lists
// for both splits; "mle_vae" consumes per-group embeddings as extra input.
void run_train_mle(const RunConfig& cfg, const std::string& out_dir,
                   const std::string& variant);

// Re-exports candidate lists for both splits from the already-trained first
// stage at the configured r_size.
void export_candidate_lists(const RunConfig& cfg, const std::string& out_dir);

// Trains the per-group encoder on the training split and writes an
// embedding row for every train/test group under <out>/vae/.
void run_train_vae(const RunConfig& cfg, const std::string& out_dir);

// Trains the candidate re-ranker. variant "ccrec" feeds real group
// embeddings; "mle_cascading" feeds zero vectors in their place.
void run_train_ccrec(const RunConfig& cfg, const std::string& out_dir,
                     const std::string& variant);

// Scores the test split with the requested variant and writes
// predictions.tsv plus report.json / report.txt under <out>/eval/<variant>/.
void run_evaluate(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& variant);

// Runs the full chain for each variant (sharing prepared data, candidates
// and embeddings) and writes a side-by-side summary under <out>/ablate/.
// With more than one r_size, additionally re-runs the cascading variants per
// candidate-list length (sharing the trained first stage and encoder) and
// writes a sweep table.
void run_ablate(const RunConfig& cfg, const std::string& out_dir,
                const std::vector<std::string>& variants,
                const std::vector<size_t>& r_sizes = {});

}  // namespace ccrec::stages
