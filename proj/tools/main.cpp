#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "mumoe/errors.hpp"

using namespace mumoe::cli;

int main(int argc, char** argv) {
  CLI::App app{"mumoe: multilinear mixture-of-experts layers"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  VerifyArgs verify;
  auto* c_verify = app.add_subcommand("verify", "run the built-in oracle suite");
  c_verify->add_option("--seed", verify.seed, "random seed");
  c_verify->add_option("--scale", verify.scale, "multiply instance counts")->check(CLI::PositiveNumber);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "write a synthetic Gaussian-cluster dataset as IDX files");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--classes", gen.classes)->check(CLI::Range(1, 256));
  c_gen->add_option("--clusters", gen.clusters, "clusters per class")->check(CLI::PositiveNumber);
  c_gen->add_option("--dim", gen.dim, "input features")->check(CLI::PositiveNumber);
  c_gen->add_option("--samples", gen.samples, "samples per class")->check(CLI::PositiveNumber);
  c_gen->add_option("--spread", gen.spread)->check(CLI::NonNegativeNumber);
  c_gen->add_option("--separation", gen.separation)->check(CLI::NonNegativeNumber);
  c_gen->add_option("--offset", gen.offset);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--minority-cluster", gen.minority_cluster, "cluster id to undersample");
  c_gen->add_option("--minority-ratio", gen.minority_ratio, "keep one in this many minority training rows")
      ->check(CLI::PositiveNumber);
  c_gen->add_option("--near-cluster", gen.near_cluster, "move the minority centre next to this cluster");
  c_gen->add_option("--near-distance", gen.near_distance)->check(CLI::NonNegativeNumber);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
  c_train->add_option("--config", train.config)->required()->check(CLI::ExistingFile);
  c_train->add_option("--data", train.data)->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", train.out)->required();
  c_train->add_option("--seed", train.seed, "override the config seed");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "per-class test accuracy");
  c_eval->add_option("--ckpt", eval.ckpt)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", eval.data)->required()->check(CLI::ExistingDirectory);

  InterveneArgs inter;
  auto* c_inter = app.add_subcommand("intervene", "ablate each expert and score polysemanticity");
  c_inter->add_option("--ckpt", inter.ckpt)->required()->check(CLI::ExistingFile);
  c_inter->add_option("--data", inter.data)->required()->check(CLI::ExistingDirectory);
  c_inter->add_option("--threshold", inter.threshold, "expert-load coefficient threshold");

  RewriteArgs rewrite;
  auto* c_rewrite = app.add_subcommand("rewrite", "add lambda * <mean a, a> to one output head");
  c_rewrite->add_option("--ckpt", rewrite.ckpt)->required()->check(CLI::ExistingFile);
  c_rewrite->add_option("--data", rewrite.data)->required()->check(CLI::ExistingDirectory);
  c_rewrite->add_option("--subpop", rewrite.subpop, "subpopulation tag")->required();
  c_rewrite->add_option("--head", rewrite.head, "output head to rewrite")->required();
  c_rewrite->add_option("--lambda", rewrite.lambda, "signed scale (default: expert count)");

  SvdArgs svd;
  auto* c_svd = app.add_subcommand("svd-ablate", "accuracy with truncated expert matrices");
  c_svd->add_option("--ckpt", svd.ckpt)->required()->check(CLI::ExistingFile);
  c_svd->add_option("--data", svd.data)->required()->check(CLI::ExistingDirectory);
  c_svd->add_option("--fraction", svd.fractions, "keep fraction(s); default 0, 0.1, ..., 1")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "cost model and forward timing");
  c_bench->add_option("--config", bench.config)->required()->check(CLI::ExistingFile);
  c_bench->add_option("--reps", bench.reps, "timed repetitions")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*c_verify) return run_verify(verify);
    if (*c_gen) return run_gen_data(gen);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(eval);
    if (*c_inter) return run_intervene(inter);
    if (*c_rewrite) return run_rewrite(rewrite);
    if (*c_svd) return run_svd_ablate(svd);
    if (*c_bench) return run_bench(bench);
  } catch (const mumoe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const mumoe::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kUsage;
  } catch (const mumoe::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const mumoe::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
