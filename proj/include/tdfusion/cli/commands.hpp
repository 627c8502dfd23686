#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tdfusion/io/checkpoint.hpp"
#include "tdfusion/io/config.hpp"
#include "tdfusion/io/pgm.hpp"
#include "tdfusion/metrics.hpp"
#include "tdfusion/report.hpp"
#include "tdfusion/trainer.hpp"
#include "tdfusion/verify.hpp"

namespace tdfusion::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kTrainingAborted = 3, kVerificationFailed = 4, kRuntimeError = 1 };

inline constexpr double kHypergradientTolerance = 1e-4;
inline constexpr double kExpansionTolerance = 1e-3;
inline constexpr std::size_t kToyParameterLimit = 1000;

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string pair_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%03zu", i);
  return buf;
}

inline std::vector<report::Row> evaluate_pairs(const std::vector<ImagePair>& pairs, const ParamSet& fusion) {
  std::vector<report::Row> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Image fused = image_from(fuse(to_tensor(pairs[i].a), to_tensor(pairs[i].b), fusion));
    rows.push_back({std::to_string(i), metrics::evaluate(pairs[i].a, pairs[i].b, fused)});
  }
  return report::with_mean(std::move(rows));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Architecture and image size of a checkpoint must match the evaluation config.
inline void require_compatible(const io::RunConfig& trained, const io::RunConfig& data) {
  const TrainConfig& a = trained.train;
  const TrainConfig& b = data.train;
  if (a.height != b.height || a.width != b.width) {
    throw ConfigError("checkpoint was trained on " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                      " images, config asks for " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  if (a.classes != b.classes) throw ConfigError("checkpoint and config disagree on the class count");
}

}  // namespace detail

/// Trains per the config; writes checkpoint, log and held-out metrics to the output directory.
inline int cmd_train(const std::filesystem::path& config_path, const std::optional<std::string>& out_override,
                     Streams s = {}) {
  io::RunConfig cfg;
  std::vector<ImagePair> data;
  try {
    cfg = io::load_config(config_path);
    cfg.validate();
    data = cfg.training_set();
  } catch (const ConfigError& e) {
    s.err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  // the override only redirects output; the checkpoint echoes the config as written
  const auto dir = detail::ensure_dir(out_override ? std::filesystem::path(*out_override) : std::filesystem::path(cfg.out_dir));
  std::ofstream log(dir / "train.log");
  TrainState state;
  try {
    state = run(data, cfg.train, [&](const LogRecord& r, const TrainState&) {
      log << r.format() << '\n';
      s.out << r.format() << '\n';
    });
  } catch (const TrainingAborted& e) {
    log << "abort " << e.what() << '\n';
    s.err << "training aborted: " << e.what() << '\n';
    return kTrainingAborted;
  }
  log.close();

  const io::Checkpoint ck = io::make_checkpoint(state, cfg);
  io::save_checkpoint(dir / "checkpoint.tdf", ck);

  const std::vector<ImagePair> held_out = cfg.eval_set();
  const std::vector<report::Row> rows = detail::evaluate_pairs(held_out, state.fusion);
  std::ostringstream table, jsonl;
  report::write_table(table, rows);
  report::write_jsonl(jsonl, rows);
  const double accuracy = task_accuracy(held_out, state.fusion, state.task);
  table << "task_accuracy " << accuracy << '\n';
  detail::write_text(dir / "metrics.txt", table.str());
  detail::write_text(dir / "metrics.jsonl", jsonl.str());

  const WeightPreference pref = weight_preference(held_out, state.lossgen);
  s.out << table.str();
  s.out << "w_a mean: target " << pref.target << " texture " << pref.texture << " background " << pref.background
        << '\n';
  s.out << "checkpoint " << (dir / "checkpoint.tdf").string() << " digest " << io::digest(io::serialize(ck)) << '\n';
  return kOk;
}

inline std::optional<autodiff::OpKind> parse_op(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(autodiff::OpKind::CrossEntropy); ++k) {
    const auto kind = static_cast<autodiff::OpKind>(k);
    if (autodiff::op_name(kind) == name) return kind;
  }
  return std::nullopt;
}

/// Compares the AD hypergradient with both brute-force oracles on a toy config.
inline int cmd_check_grad(const std::filesystem::path& config_path, const std::optional<std::string>& corrupt_op,
                          Streams s = {}) {
  verify::MetaProblem problem;
  try {
    io::RunConfig cfg = io::load_config(config_path);
    cfg.train.validate(cfg.dataset_size, /*allow_zero_steps=*/true);
    problem = verify::make_problem(cfg.train);
    if (problem.parameter_count() > kToyParameterLimit) {
      throw ConfigError("check-grad needs a toy config with at most " + std::to_string(kToyParameterLimit) +
                        " parameters, this one has " + std::to_string(problem.parameter_count()));
    }
  } catch (const std::invalid_argument& e) {
    s.err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  if (corrupt_op) {
    const auto kind = parse_op(*corrupt_op);
    if (!kind) {
      s.err << "unknown op '" << *corrupt_op << "'\n";
      return kConfigError;
    }
    autodiff::testing::corrupted_backward = kind;
  }
  verify::GradCheckReport r;
  try {
    r = verify::check_hypergradient(problem);
  } catch (...) {
    autodiff::testing::corrupted_backward.reset();
    throw;
  }
  autodiff::testing::corrupted_backward.reset();

  double largest = 0.0;
  for (double v : r.ad) largest = std::max(largest, std::abs(v));
  const bool fd_ok = r.fd_error <= kHypergradientTolerance;
  const bool exp_ok = r.expansion_error <= kExpansionTolerance;
  s.out << "parameters " << r.parameters << " (lossgen " << r.ad.size() << ")\n";
  s.out << "max |hypergradient| " << largest << '\n';
  s.out << "hypergradient vs finite differences: max rel err " << r.fd_error << " (tol " << kHypergradientTolerance
        << ") " << (fd_ok ? "ok" : "FAIL") << '\n';
  s.out << "hypergradient vs mixed-partial expansion: max rel err " << r.expansion_error << " (tol "
        << kExpansionTolerance << ") " << (exp_ok ? "ok" : "FAIL") << '\n';
  return fd_ok && exp_ok ? kOk : kVerificationFailed;
}

/// Writes w_a, w_b heatmaps and the fused image for one pair.
/// `pair` is either an index into the checkpoint config's held-out set or "a.pgm,b.pgm".
inline int cmd_export_weights(const std::filesystem::path& ckpt_path, const std::string& pair,
                              const std::filesystem::path& out_dir, Streams s = {}) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  io::RunConfig cfg;
  ImagePair input;
  bool synthetic = false;
  try {
    cfg = ck.config();
    if (const auto comma = pair.find(','); comma != std::string::npos) {
      input.a = io::read_pgm(pair.substr(0, comma));
      input.b = io::read_pgm(pair.substr(comma + 1));
    } else {
      std::size_t index = 0;
      try {
        index = std::stoul(pair);
      } catch (const std::exception&) {
        throw ConfigError("--pair must be an index or 'a.pgm,b.pgm', got '" + pair + "'");
      }
      const std::vector<ImagePair> held_out = cfg.eval_set();
      if (index >= held_out.size()) {
        throw ConfigError("pair index " + std::to_string(index) + " out of range (held-out set has " +
                          std::to_string(held_out.size()) + " pairs)");
      }
      input = held_out[index];
      synthetic = true;
    }
    if (!input.a.same_shape(input.b) || input.a.height != cfg.train.height || input.a.width != cfg.train.width) {
      throw ConfigError("pair shape does not match the training shape " + std::to_string(cfg.train.height) + "x" +
                        std::to_string(cfg.train.width));
    }
  } catch (const ConfigError& e) {
    s.err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const auto dir = detail::ensure_dir(out_dir);
  const autodiff::Tensor a = to_tensor(input.a), b = to_tensor(input.b);
  const FusionWeights w = gen_weights(a, b, ck.lossgen);
  io::write_pgm(dir / "w_a.pgm", image_from(w.w_a));
  io::write_pgm(dir / "w_b.pgm", image_from(w.w_b));
  io::write_pgm(dir / "fused.pgm", image_from(fuse(a, b, ck.fusion)));
  io::write_pgm(dir / "a.pgm", input.a);
  io::write_pgm(dir / "b.pgm", input.b);
  s.out << "wrote w_a.pgm w_b.pgm fused.pgm to " << dir.string() << '\n';
  if (synthetic) {
    io::write_label_pgm(dir / "labels.pgm", input.labels, input.a.height, input.a.width, kClassCount);
    const WeightPreference pref = weight_preference({input}, ck.lossgen);
    s.out << "w_a mean: target " << pref.target << " texture " << pref.texture << " background " << pref.background
          << '\n';
  }
  return kOk;
}

/// Metrics table over the config's held-out set plus task accuracy.
inline int cmd_eval(const std::filesystem::path& ckpt_path, const std::filesystem::path& config_path,
                    Streams s = {}) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  io::RunConfig data_cfg;
  try {
    data_cfg = io::load_config(config_path);
    data_cfg.scene.validate();
    detail::require_compatible(ck.config(), data_cfg);
  } catch (const std::invalid_argument& e) {
    s.err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const std::vector<ImagePair> pairs = data_cfg.eval_set();
  const std::vector<report::Row> rows = detail::evaluate_pairs(pairs, ck.fusion);
  report::write_table(s.out, rows);
  s.out << "task_accuracy " << task_accuracy(pairs, ck.fusion, ck.task) << '\n';
  return kOk;
}

/// Exports the training pairs of a config as PGM files.
inline int cmd_gen_data(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                        Streams s = {}) {
  std::vector<ImagePair> pairs;
  try {
    const io::RunConfig cfg = io::load_config(config_path);
    cfg.scene.validate();
    if (cfg.dataset_size < 4) throw ConfigError("dataset_size must be >= 4");
    pairs = cfg.training_set();
  } catch (const std::invalid_argument& e) {
    s.err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  const auto dir = detail::ensure_dir(out_dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string stem = detail::pair_name(i);
    io::write_pgm(dir / (stem + "_a.pgm"), pairs[i].a);
    io::write_pgm(dir / (stem + "_b.pgm"), pairs[i].b);
    io::write_label_pgm(dir / (stem + "_labels.pgm"), pairs[i].labels, pairs[i].a.height, pairs[i].a.width,
                        kClassCount);
  }
  s.out << "wrote " << pairs.size() << " pairs to " << dir.string() << '\n';
  return kOk;
}

}  // namespace tdfusion::cli
