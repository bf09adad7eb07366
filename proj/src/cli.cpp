#include "ccrec/cli.hpp"

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ccrec/stages.hpp"

namespace ccrec {

namespace {

struct CliArgs {
  std::string config;
  std::string out;
  std::string variant;
  std::vector<std::string> variants;
  uint64_t seed = 0;
  bool has_seed = false;
  size_t r_size = 0;
  std::vector<size_t> r_sweep;
};

CLI::App* add_stage(CLI::App& app, CliArgs& args, const std::string& name,
                    const std::string& help) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", args.config, "run configuration file")->required();
  sub->add_option("--seed", args.seed, "override the training and generator seed")
      ->each([&args](const std::string&) { args.has_seed = true; });
  sub->add_option("--out", args.out, "output directory (default runs/<config hash>)");
  return sub;
}

}  // namespace

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"cascading category-level recommender pipeline"};
  app.require_subcommand(1);
  CliArgs args;

  add_stage(app, args, "synth", "generate a synthetic interaction log");
  add_stage(app, args, "prepare", "ingest, split and canonicalize the dataset");
  CLI::App* train_mle =
      add_stage(app, args, "train_mle", "train the next-category sequence model");
  train_mle->add_option("--variant", args.variant, "mle (default) or mle_vae");
  train_mle->add_option("--r-size", args.r_size, "override the candidate list length");
  add_stage(app, args, "train_vae", "train the per-group encoder and embed all groups");
  CLI::App* train_ccrec =
      add_stage(app, args, "train_ccrec", "train the candidate re-ranker");
  train_ccrec->add_option("--variant", args.variant, "ccrec (default) or mle_cascading");
  CLI::App* evaluate = add_stage(app, args, "evaluate", "score the test split");
  evaluate->add_option("--variant", args.variant,
                       "mle, mle_vae, mle_cascading or ccrec (default)");
  CLI::App* ablate =
      add_stage(app, args, "ablate", "run and compare variants side by side");
  ablate->add_option("--variant", args.variants,
                     "variants to include (repeatable; default all)");
  ablate->add_option("--r-size", args.r_sweep,
                     "candidate list length; repeat to sweep several lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config_error: " << e.what() << "\n";
    return exit_code_for("config_error");
  }

  try {
    RunConfig cfg = RunConfig::from_file(args.config);
    if (args.has_seed) {
      cfg.train.seed = args.seed;
      cfg.synth.seed = args.seed;
    }
    if (args.r_size > 0) cfg.model.r_size = args.r_size;
    if (args.r_sweep.size() == 1) cfg.model.r_size = args.r_sweep.front();
    cfg.validate();
    std::string out = args.out.empty() ? stages::default_out_dir(cfg) : args.out;
    stages::write_manifest(cfg, out);

    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "synth") {
      stages::run_synth(cfg, out);
    } else if (stage == "prepare") {
      stages::run_prepare(cfg, out);
    } else if (stage == "train_mle") {
      stages::run_train_mle(cfg, out, args.variant.empty() ? "mle" : args.variant);
    } else if (stage == "train_vae") {
      stages::run_train_vae(cfg, out);
    } else if (stage == "train_ccrec") {
      stages::run_train_ccrec(cfg, out, args.variant.empty() ? "ccrec" : args.variant);
    } else if (stage == "evaluate") {
      stages::run_evaluate(cfg, out, args.variant.empty() ? "ccrec" : args.variant);
    } else if (stage == "ablate") {
      stages::run_ablate(cfg, out, args.variants,
                         args.r_sweep.size() > 1 ? args.r_sweep : std::vector<size_t>{});
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ccrec
