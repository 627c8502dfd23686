#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "tdfusion/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace tdfusion;
  CLI::App app{"Task-driven image fusion: meta-learned fusion loss on synthetic two-modality data"};
  app.require_subcommand(1);

  std::string config, ckpt, out, pair, corrupt;

  auto* train = app.add_subcommand("train", "train all three networks");
  train->add_option("--config", config, "run config file")->required();
  train->add_option("--out", out, "output directory (overrides out_dir)");

  auto* check = app.add_subcommand("check-grad", "verify the hypergradient on a toy config");
  check->add_option("--config", config, "toy config file")->required();
  check->add_option("--corrupt-backward", corrupt, "scale one op's backward rule (negative control)")->group("");

  auto* exp = app.add_subcommand("export-weights", "write weight heatmaps for one pair");
  exp->add_option("--ckpt", ckpt, "checkpoint file")->required();
  exp->add_option("--pair", pair, "held-out pair index, or a.pgm,b.pgm")->required();
  exp->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "fusion metrics and task accuracy on a held-out set");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--config", config, "dataset config file")->required();

  auto* gen = app.add_subcommand("gen-data", "export the synthetic training pairs as PGM");
  gen->add_option("--config", config, "run config file")->required();
  gen->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  try {
    if (*train) return cli::cmd_train(config, out.empty() ? std::nullopt : std::optional<std::string>(out));
    if (*check) return cli::cmd_check_grad(config, corrupt.empty() ? std::nullopt : std::optional<std::string>(corrupt));
    if (*exp) return cli::cmd_export_weights(ckpt, pair, out);
    if (*eval) return cli::cmd_eval(ckpt, config);
    if (*gen) return cli::cmd_gen_data(config, out);
  } catch (const io::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kRuntimeError;
  }
  return cli::kOk;
}
