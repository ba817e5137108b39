#include <malloc.h>

#include <iostream>

#include "CLI11.hpp"
#include "infmask/cli/commands.hpp"

using namespace infmask;

namespace {

// Keep freed activation buffers in the heap instead of returning them to the
// kernel after every step.
void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"InfMasking lab: Trifeature data, training, probing, ablations and verification"};
  app.require_subcommand(1);
  cli::CommandOptions o;
  std::string seeds_text;

  auto common = [&](CLI::App* sub, bool training) {
    sub->add_option("--config", o.config, "experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output root (overrides the config's `out`)");
    sub->add_flag("--force", o.force, "overwrite a non-empty output directory");
    if (!training) return;
    sub->add_option("--seeds,--seed", seeds_text, "seed list, e.g. 42..46 or 42,43");
    sub->add_option("--estimator", o.estimator, "masking-term estimator")->check(CLI::IsMember({"mc", "gaussian"}));
    sub->add_option("--views", o.views, "masked views per sample (M')");
    sub->add_option("--ratio", o.ratio, "mask ratio r");
    sub->add_flag("--quiet", o.quiet, "no per-epoch log lines");
  };

  auto* gen = app.add_subcommand("gen-data", "render a Trifeature dataset to disk");
  common(gen, false);
  gen->add_option("--seeds,--seed", seeds_text, "dataset seed (overrides data.seed)");

  auto* tr = app.add_subcommand("train", "train one model per seed and probe it");
  common(tr, true);

  auto* pr = app.add_subcommand("probe", "linear-probe saved checkpoints");
  common(pr, true);
  pr->add_option("--checkpoint", o.checkpoints, "checkpoint files (default: every seed of the run)");

  auto* ab = app.add_subcommand("ablate", "train + probe over an ablation axis");
  common(ab, true);
  ab->add_option("--axis", o.axis, "views, ratio or weights")->required()->check(CLI::IsMember({"views", "ratio", "weights"}));
  ab->add_option("--values", o.values, "comma-separated axis values (weights as l1:l2:l3)")->required()->delimiter(',');

  auto* ver = app.add_subcommand("verify", "run the oracle suite");
  ver->add_option("--config", o.config, "take loss.tau from this config")->check(CLI::ExistingFile);
  ver->add_option("--out", o.out, "write verify.csv and verify.txt here");
  ver->add_flag("--quick", o.quick, "smaller sample counts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!seeds_text.empty()) o.seeds = config::parse_seeds(seeds_text);
    if (gen->parsed()) {
      if (o.seeds && o.seeds->size() != 1) throw ConfigError("gen-data takes a single --seed");
      if (o.seeds) o.data_seed = o.seeds->front();
      o.seeds.reset();
      return cli::cmd_gen_data(o);
    }
    if (tr->parsed()) return cli::cmd_train(o);
    if (pr->parsed()) return cli::cmd_probe(o);
    if (ab->parsed()) return cli::cmd_ablate(o);
    if (ver->parsed()) return cli::cmd_verify(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
