// Runs every acceptance criterion, then prints one PASS/FAIL line per criterion.
// Exits 0 once all criteria have run; with --strict, exits 1 if any failed.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/metric_refs.hpp"
#include "support/op_checks.hpp"
#include "tdfusion/cli/commands.hpp"
#include "tdfusion/io/checkpoint.hpp"
#include "tdfusion/io/config.hpp"
#include "tdfusion/metrics.hpp"
#include "tdfusion/trainer.hpp"
#include "tdfusion/verify.hpp"

using namespace tdfusion;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = TDF_CONFIG_DIR;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << std::scientific << v;
  return s.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << std::fixed << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Verdict {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string summary;
};

std::vector<Verdict> verdicts;

void detail(const std::string& line) { std::cout << "    " << line << std::endl; }

void record_verdict(int id, const std::string& title, bool pass, const std::string& summary) {
  verdicts.push_back({id, title, pass, summary});
  detail(std::string("=> ") + (pass ? "pass" : "fail") + ": " + summary);
}

/// Runs a criterion body; an escaping exception counts as a failure.
void criterion(int id, const std::string& title, const std::function<void()>& body) {
  std::cout << "-- criterion " << id << ": " << title << std::endl;
  try {
    body();
  } catch (const std::exception& e) {
    record_verdict(id, title, false, std::string("exception: ") + e.what());
  }
}

io::RunConfig desk_config(std::uint64_t seed) {
  io::RunConfig cfg = io::load_config(kConfigDir / "desk.cfg");
  cfg.train.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------- 1, 2

void hypergradient_vs_finite_differences() {
  const io::RunConfig cfg = io::load_config(kConfigDir / "toy.cfg");
  cfg.train.validate(cfg.dataset_size);
  const auto t0 = Clock::now();
  const verify::MetaProblem p = verify::make_problem(cfg.train);
  const verify::GradCheckReport r = verify::check_hypergradient(p);
  const double elapsed = seconds_since(t0);
  detail("toy.cfg: " + std::to_string(r.parameters) + " parameters, " + std::to_string(r.ad.size()) +
         " in the loss generator");
  detail("AD vs central differences over the inner+outer chain: " + sci(r.fd_error));
  const bool pass = r.parameters <= 1000 && r.fd_error <= 1e-4 && elapsed <= 60.0;
  record_verdict(1, "hypergradient vs finite differences", pass,
         "max rel err " + sci(r.fd_error) + " (tol 1e-4), " + std::to_string(r.parameters) + " params, " +
             fixed(elapsed, 1) + " s (limit 60 s)");
}

void hypergradient_vs_expansion() {
  const io::RunConfig cfg = io::load_config(kConfigDir / "toy_small.cfg");
  cfg.train.validate(cfg.dataset_size);
  const verify::MetaProblem p = verify::make_problem(cfg.train);
  const verify::GradCheckReport r = verify::check_hypergradient(p);
  std::ostringstream v;
  for (std::size_t i = 0; i < r.ad.size(); ++i) {
    v << (i ? ", " : "") << sci(r.ad[i]) << " vs " << sci(r.expansion[i]);
  }
  detail("toy_small.cfg: " + std::to_string(r.parameters) + " parameters");
  detail("AD vs mixed-partial product per loss-generator parameter: " + v.str());
  const bool pass = r.parameters <= 20 && r.expansion_error <= 1e-3;
  record_verdict(2, "hypergradient vs mixed-partial expansion", pass,
         "max rel err " + sci(r.expansion_error) + " (tol 1e-3), " + std::to_string(r.parameters) + " params");
}

// ---------------------------------------------------------------- 3, 4, 5, 7

struct RunResult {
  double target = 0.0;
  double texture = 0.0;
  double accuracy = 0.0;
};

RunResult evaluate_run(const io::RunConfig& cfg, const ParamSet& fusion, const ParamSet& task,
                       const ParamSet& lossgen) {
  const std::vector<ImagePair> held_out = cfg.eval_set();
  const WeightPreference pref = weight_preference(held_out, lossgen);
  return {pref.target, pref.texture, task_accuracy(held_out, fusion, task)};
}

struct InvariantLog {
  std::size_t outer = 0, inner = 0, fusion = 0;
  std::size_t freeze_violations = 0;
  std::size_t simplex_violations = 0;
  double worst_sum_error = 0.0;
  double lowest = 1.0, highest = 0.0;
};

/// Trains one full-method seed while checking the simplex and freeze invariants after every update.
RunResult full_run_with_invariants(std::uint64_t seed, InvariantLog& inv) {
  const io::RunConfig cfg = desk_config(seed);
  const std::vector<ImagePair> data = cfg.training_set();
  const Batch probe = make_batch(data, {0, 1});
  ParamSet prev_f, prev_t, prev_g;
  bool first = true;
  const TrainState s = run(data, cfg.train, [&](const LogRecord& r, const TrainState& st) {
    if (!first) {
      const bool frozen_ok = r.phase == Phase::Fusion
                                 ? st.lossgen.bitwise_equal(prev_g)
                                 : st.fusion.bitwise_equal(prev_f) && st.task.bitwise_equal(prev_t);
      if (!frozen_ok) ++inv.freeze_violations;
    }
    first = false;
    prev_f = st.fusion;
    prev_t = st.task;
    prev_g = st.lossgen;
    (r.phase == Phase::Outer ? inv.outer : r.phase == Phase::Fusion ? inv.fusion : inv.inner) += 1;
    if (r.phase == Phase::Outer) {
      const FusionWeights w = gen_weights(probe.a, probe.b, st.lossgen);
      for (std::size_t i = 0; i < w.w_a.numel(); ++i) {
        const double e = std::abs(w.w_a[i] + w.w_b[i] - 1.0);
        inv.worst_sum_error = std::max(inv.worst_sum_error, e);
        inv.lowest = std::min({inv.lowest, w.w_a[i], w.w_b[i]});
        inv.highest = std::max({inv.highest, w.w_a[i], w.w_b[i]});
        if (e > 1e-9 || w.w_a[i] < 0.0 || w.w_a[i] > 1.0 || w.w_b[i] < 0.0 || w.w_b[i] > 1.0) {
          ++inv.simplex_violations;
        }
      }
    }
  });
  return evaluate_run(cfg, s.fusion, s.task, s.lossgen);
}

RunResult baseline_run(std::uint64_t seed) {
  io::RunConfig cfg = desk_config(seed);
  cfg.train.fixed_half_weights = true;
  const TrainState s = run(cfg.training_set(), cfg.train);
  return evaluate_run(cfg, s.fusion, s.task, s.lossgen);
}

void training_criteria() {
  const io::RunConfig base = desk_config(0);
  const std::size_t L = base.train.epochs, M = base.train.meta_steps,
                    N = base.train.resolved_fusion_steps(base.dataset_size);
  detail("desk.cfg: " + std::to_string(base.train.height) + "x" + std::to_string(base.train.width) + ", L=" +
         std::to_string(L) + " M=" + std::to_string(M) + " N=" + std::to_string(N) + ", " +
         std::to_string(base.dataset_size) + " training pairs, " + std::to_string(base.eval_size) + " held-out pairs");
  const auto t_all = Clock::now();

  // Seed 0 goes through the train command twice; its checkpoint also feeds criterion 5.
  const fs::path scratch = fs::temp_directory_path() / ("tdf_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  const fs::path cfg_path = scratch / "desk_seed0.cfg";
  fs::create_directories(scratch);
  std::ofstream(cfg_path) << io::to_text(base);
  std::ostringstream sink;
  auto t0 = Clock::now();
  const int code1 = cli::cmd_train(cfg_path, (scratch / "run1").string(), {sink, sink});
  detail("seed 0 train #1: exit " + std::to_string(code1) + ", " + fixed(seconds_since(t0), 1) + " s");
  t0 = Clock::now();
  const int code2 = cli::cmd_train(cfg_path, (scratch / "run2").string(), {sink, sink});
  detail("seed 0 train #2: exit " + std::to_string(code2) + ", " + fixed(seconds_since(t0), 1) + " s");

  criterion(7, "determinism", [&] {
    const std::string ck1 = slurp(scratch / "run1" / "checkpoint.tdf"), ck2 = slurp(scratch / "run2" / "checkpoint.tdf");
    const std::string log1 = slurp(scratch / "run1" / "train.log"), log2 = slurp(scratch / "run2" / "train.log");
    const std::string m1 = slurp(scratch / "run1" / "metrics.txt"), m2 = slurp(scratch / "run2" / "metrics.txt");
    detail("checkpoint digests " + io::digest(ck1) + " / " + io::digest(ck2) + ", " + std::to_string(ck1.size()) +
           " bytes");
    detail("train.log digests " + io::digest(log1) + " / " + io::digest(log2) + ", " +
           std::to_string(std::count(log1.begin(), log1.end(), '\n')) + " records");
    const bool pass = code1 == 0 && code2 == 0 && !ck1.empty() && ck1 == ck2 && !log1.empty() && log1 == log2 && m1 == m2;
    record_verdict(7, "determinism", pass,
           std::string(ck1 == ck2 ? "checkpoints bit-identical" : "checkpoints differ") + ", " +
               (log1 == log2 ? "logs bit-identical" : "logs differ"));
  });

  std::vector<RunResult> full(3), baseline(3);
  const io::Checkpoint ck0 = io::load_checkpoint(scratch / "run1" / "checkpoint.tdf");
  full[0] = evaluate_run(base, ck0.fusion, ck0.task, ck0.lossgen);
  fs::remove_all(scratch);

  std::vector<InvariantLog> inv(3);
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    t0 = Clock::now();
    full[seed] = full_run_with_invariants(seed, inv[seed]);
    detail("seed " + std::to_string(seed) + " full method: " + fixed(seconds_since(t0), 1) + " s");
  }
  for (std::uint64_t seed = 0; seed <= 2; ++seed) {
    t0 = Clock::now();
    baseline[seed] = baseline_run(seed);
    detail("seed " + std::to_string(seed) + " fixed-1/2 baseline: " + fixed(seconds_since(t0), 1) + " s");
  }
  const double total_minutes = seconds_since(t_all) / 60.0;

  criterion(3, "simplex invariant", [&] {
    std::size_t checked = 0, violations = 0;
    double worst = 0.0, lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      checked += inv[seed].outer;
      violations += inv[seed].simplex_violations;
      worst = std::max(worst, inv[seed].worst_sum_error);
      lo = std::min(lo, inv[seed].lowest);
      hi = std::max(hi, inv[seed].highest);
    }
    detail("weights probed on two training pairs after each of " + std::to_string(checked) +
           " outer updates (seeds 1, 2)");
    detail("w range [" + fixed(lo, 6) + ", " + fixed(hi, 6) + "]");
    record_verdict(3, "simplex invariant", checked > 0 && violations == 0,
           "max |w_a + w_b - 1| " + sci(worst) + " (tol 1e-9), " + std::to_string(violations) + " violating pixels");
  });

  criterion(4, "freeze discipline", [&] {
    bool counts_ok = true;
    std::size_t violations = 0;
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      detail("seed " + std::to_string(seed) + ": " + std::to_string(inv[seed].inner) + " inner, " +
             std::to_string(inv[seed].outer) + " outer, " + std::to_string(inv[seed].fusion) + " fusion updates");
      counts_ok &= inv[seed].outer == L * M && inv[seed].inner == L * M && inv[seed].fusion == L * N;
      violations += inv[seed].freeze_violations;
    }
    record_verdict(4, "freeze discipline", counts_ok && violations == 0,
           std::to_string(violations) + " frozen-parameter changes; counts " + (counts_ok ? "match" : "differ from") +
               " L*M=" + std::to_string(L * M) + " outer and L*N=" + std::to_string(L * N) + " fusion");
  });

  criterion(5, "task-preference recovery", [&] {
    double pref = 0.0, gain = 0.0;
    for (std::size_t seed = 0; seed < 3; ++seed) {
      const RunResult& f = full[seed];
      const RunResult& b = baseline[seed];
      detail("seed " + std::to_string(seed) + ": w_a target " + fixed(f.target) + ", texture " + fixed(f.texture) +
             ", diff " + fixed(f.target - f.texture) + "; accuracy full " + fixed(100 * f.accuracy, 2) +
             "%, baseline " + fixed(100 * b.accuracy, 2) + "%");
      pref += (f.target - f.texture) / 3.0;
      gain += 100.0 * (f.accuracy - b.accuracy) / 3.0;
    }
    detail("total training time " + fixed(total_minutes, 1) + " min for 3 full and 3 baseline runs");
    const bool pref_ok = pref >= 0.15, gain_ok = gain >= 2.0, time_ok = total_minutes <= 30.0;
    record_verdict(5, "task-preference recovery", pref_ok && gain_ok && time_ok,
           "(a) mean w_a target - texture " + fixed(pref) + " (need >= 0.15) " + (pref_ok ? "ok" : "not met") +
               "; (b) accuracy gain " + fixed(gain, 2) + " pts (need >= 2) " + (gain_ok ? "ok" : "not met") + "; " +
               fixed(total_minutes, 1) + " min (limit 30)");
  });
}

// ---------------------------------------------------------------- 6

void metric_suite() {
  using namespace tdfusion::metrics;
  std::mt19937_64 rng(5);
  const Image a = testsupport::textured_image(32, 32, rng), b = testsupport::random_image(32, 32, rng);
  Image sum(32, 32);
  for (std::size_t i = 0; i < sum.size(); ++i) sum.pixels[i] = a.pixels[i] + b.pixels[i];

  struct Check {
    std::string what;
    bool pass;
    std::string value;
  };
  std::vector<Check> checks;
  const double en0 = entropy(Image(32, 32, 0.4)), sf0 = spatial_frequency(Image(32, 32, 0.4));
  checks.push_back({"EN(constant) = 0 exactly", en0 == 0.0, sci(en0)});
  checks.push_back({"SF(constant) = 0 exactly", sf0 == 0.0, sci(sf0)});
  const double s1 = ssim_fusion(a, a, a), v1 = vif(a, a, a), c2 = scd(a, b, sum);
  checks.push_back({"SSIM identity = 1 +- 1e-9", std::abs(s1 - 1.0) <= 1e-9, fixed(s1, 12)});
  checks.push_back({"VIF identity = 1 +- 1e-6", std::abs(v1 - 1.0) <= 1e-6, fixed(v1, 9)});
  checks.push_back({"SCD(I_a + I_b) = 2 +- 1e-6", std::abs(c2 - 2.0) <= 1e-6, fixed(c2, 9)});

  double qlo = 1.0, qhi = 0.0;
  for (const testsupport::Triple& t : testsupport::random_triples()) {
    const double q = qabf(t.a, t.b, t.f);
    qlo = std::min(qlo, q);
    qhi = std::max(qhi, q);
  }
  checks.push_back({"Qabf in [0, 1] on 20 random triples", qlo >= 0.0 && qhi <= 1.0,
                    "[" + fixed(qlo, 6) + ", " + fixed(qhi, 6) + "]"});
  const double q1 = qabf(a, a, a);
  checks.push_back({"Qabf identity >= 0.98", q1 >= 0.98,
                    fixed(q1, 6) + " (perfect-transfer ceiling of the standard constants is " +
                        fixed(testsupport::perfect_transfer_quality(), 6) + ")"});

  const testsupport::ReferenceDeviation d = testsupport::reference_deviation();
  checks.push_back({"EN vs brute force <= 1e-6", d.en <= 1e-6, sci(d.en)});
  checks.push_back({"SF vs brute force <= 1e-6", d.sf <= 1e-6, sci(d.sf)});
  checks.push_back({"SCD vs brute force <= 1e-6", d.scd <= 1e-6, sci(d.scd)});
  checks.push_back({"SSIM vs brute force <= 1e-6", d.ssim <= 1e-6, sci(d.ssim)});
  checks.push_back({"Qabf vs brute force <= 1e-3", d.qabf <= 1e-3, sci(d.qabf)});
  checks.push_back({"VIF vs brute force <= 1e-3", d.vif <= 1e-3, sci(d.vif)});

  std::size_t failed = 0;
  std::string failures;
  for (const Check& c : checks) {
    detail(std::string(c.pass ? "ok   " : "FAIL ") + c.what + ": " + c.value);
    if (!c.pass) {
      failures += (failed ? "; " : "") + c.what;
      ++failed;
    }
  }
  record_verdict(6, "metric identity suite", failed == 0,
         std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " checks hold" +
             (failed ? " (failing: " + failures + ")" : ""));
}

// ---------------------------------------------------------------- 8

void autodiff_suite() {
  double worst_first = 0.0, worst_second = 0.0;
  std::string worst_op;
  std::size_t failing = 0;
  const auto cases = testsupport::op_cases();
  for (const testsupport::OpCase& c : cases) {
    const double e1 = testsupport::first_order_error(c), e2 = testsupport::second_order_error(c);
    if (e1 > worst_first) {
      worst_first = e1;
      worst_op = c.name;
    }
    worst_second = std::max(worst_second, e2);
    if (e1 > 1e-6) {
      ++failing;
      detail("FAIL " + c.name + ": " + sci(e1));
    }
  }
  const double poly = testsupport::polynomial_second_order_error();
  detail(std::to_string(cases.size()) + " op cases; worst first-order error " + sci(worst_first) + " (" + worst_op + ")");
  detail("backward-of-backward vs differenced gradients, worst over all ops: " + sci(worst_second));
  detail("second derivatives of 50 random polynomials up to degree 4: worst error " + sci(poly));
  record_verdict(8, "primitive autodiff suite", failing == 0 && poly <= 1e-8,
         std::to_string(cases.size() - failing) + "/" + std::to_string(cases.size()) +
             " ops within 1e-6 (worst " + sci(worst_first) + "), polynomial second derivatives " + sci(poly) +
             " (tol 1e-8)");
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      std::cerr << "usage: acceptance [--strict]\n";
      return 2;
    }
  }
  std::cout << std::unitbuf;

  criterion(8, "primitive autodiff suite", autodiff_suite);
  criterion(1, "hypergradient vs finite differences", hypergradient_vs_finite_differences);
  criterion(2, "hypergradient vs mixed-partial expansion", hypergradient_vs_expansion);
  criterion(6, "metric identity suite", metric_suite);
  try {
    training_criteria();
  } catch (const std::exception& e) {
    for (int id : {3, 4, 5, 7}) {
      if (std::none_of(verdicts.begin(), verdicts.end(), [&](const Verdict& v) { return v.id == id; })) {
        record_verdict(id, "training run", false, std::string("exception: ") + e.what());
      }
    }
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& x, const Verdict& y) { return x.id < y.id; });
  std::cout << "\n== summary ==\n";
  std::size_t failed = 0;
  for (const Verdict& v : verdicts) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << v.id << " " << v.title << ": " << v.summary << '\n';
    failed += v.pass ? 0 : 1;
  }
  std::cout << verdicts.size() - failed << "/" << verdicts.size() << " criteria pass\n";
  if (verdicts.size() != 8) {
    std::cout << "error: expected 8 criteria, ran " << verdicts.size() << '\n';
    return 1;
  }
  return strict && failed > 0 ? 1 : 0;
}
