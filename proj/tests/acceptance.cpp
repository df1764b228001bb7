// Acceptance run: one PASS/FAIL line per criterion. Usage: acceptance <workdir>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "orbit/orbit.hpp"

using namespace orbit;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes, pinned.
constexpr double kCorrectionTol = 1e-9;        // 1: |sum c_n - 64/pi|
constexpr double kCorrectionTime = 1e-3;       // 1: seconds
constexpr int kAllocInstances = 1000;          // 2
constexpr double kHeuristicGap = 0.05;         // 2: relative
constexpr double kAllocTime = 60.0;            // 2: seconds
constexpr int kGradSeeds = 100;                // 3
constexpr double kGradTol = 1e-4;              // 3: relative error
constexpr double kGradTime = 120.0;            // 3: seconds
constexpr int kRemapTraces = 100;              // 4
constexpr double kRemapTol = 1e-9;             // 4: degrees per step
constexpr double kCompensationFloor = 0.5;     // 5: at tau = 0.5 s
constexpr double kTrainTime = 600.0;           // 5: seconds, training + eval
constexpr std::size_t kStrictPoints = 4;       // 7: of 6 rate points
constexpr double kSweepTime = 300.0;           // 7: seconds
constexpr double kPsnrTol = 1e-9;              // 8: dB

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class... A>
std::string fmt(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

// ---- CLI corpus ----------------------------------------------------------------

struct CliRun {
  std::string args;
  int code = -1;
  double seconds = 0.0;
};

// Every command of the acceptance corpus, paths relative to --workdir.
std::vector<std::string> corpus_commands() {
  const std::string tp = "corpus/stream/throughput.csv", man = "corpus/stream/manifest.json";
  return {
      "fixtures generate --kind corpus --out corpus",
      "fixtures generate --kind frames --out frames",
      "fixtures generate --kind sinusoid --out sinusoid",
      "fixtures generate --kind ladder --frames --count 2 --out ladder",
      "train fusion --spec corpus/spec.json --data corpus/data --config corpus/config.json --folds 1 --out model.json "
      "--report train_report.csv",
      "predict eval --trace corpus/data/traces/rec_01.csv --policy fusion-max --model model.json "
      "--saliency corpus/data/saliency/rec_01 --out eval_fusion.csv",
      "predict eval --trace corpus/data/traces/rec_01.csv --policy linreg --out eval_linreg.csv",
      "predict eval --trace sinusoid/trace.csv --policy none --out eval_none.csv",
      "tiles optimize --manifest ladder/manifest.json --viewport 30,10,90,90 --budget 8e6 --export-qcp alloc.lp "
      "--out alloc.csv",
      "stream simulate --manifest " + man + " --throughput " + tp +
          " --trace corpus/stream/traces/viewer_0.csv --policy monolithic --out sim_mono.csv",
      "stream simulate --manifest " + man + " --throughput " + tp +
          " --trace corpus/stream/traces/viewer_0.csv --policy tiled --out sim_tiled.csv",
      "stream simulate --manifest " + man + " --throughput " + tp +
          " --trace corpus/stream/traces/viewer_0.csv --policy tiled-pred --predictor linreg --out sim_pred.csv",
      "stream sweep --manifest " + man + " --trace corpus/stream/traces --rates 6,8,10,12,14,16 "
      "--policies monolithic,tiled,tiled-pred --predictor oracle --out sweep.csv --detail sweep_detail.csv",
  };
}

std::vector<CliRun> run_corpus(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<CliRun> out;
  for (const auto& c : corpus_commands()) {
    CliRun r{c};
    const auto t0 = Clock::now();
    const std::string cmd = std::string(ORBIT_CLI) + " --seed 1 --workdir " + dir.string() + " " + c + " >>" +
                            (dir / "cli.log").string() + " 2>&1";
    const int st = std::system(cmd.c_str());
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    r.seconds = since(t0);
    std::printf("  [%.1fs] orbit %s -> %d\n", r.seconds, c.c_str(), r.code);
    std::fflush(stdout);
    out.push_back(r);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Relative path -> content hash, excluding the timing-bearing log.
std::map<std::string, std::uint64_t> hash_tree(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "cli.log")
      out[fs::relative(e.path(), root).string()] = fnv1a(io::read_text(e.path()));
  return out;
}

// ---- criteria ------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  const TileGrid g(4, 8, ErpPlane(256, 128));
  double sum = 0.0;
  for (double c : spherical_corrections(g)) sum += c;
  const double secs = since(t0);
  const double err = std::abs(sum - 64.0 / kPi);
  report(1, err <= kCorrectionTol && secs < kCorrectionTime,
         fmt("sum c_n = %.15f, 64/pi = %.15f, |diff| = %.2e (tol 1e-9), %.2e s", sum, 64.0 / kPi, err, secs));
}

void criterion2() {
  const auto t0 = Clock::now();
  Rng rng(20240);
  int exact_mismatch = 0, zero_mismatch = 0, over_budget = 0;
  double worst_gap = 0.0;
  for (int inst = 0; inst < kAllocInstances; ++inst) {
    const std::size_t n = 1 + rng.index(8);
    const std::size_t reps = 1 + rng.index(3);
    const auto t = oracle::random_table(rng, n, reps);
    const auto w = weights_from_raw(oracle::random_weights(rng, n));
    double lo = 0.0, hi = 0.0;
    for (const auto& l : t.tiles) {
      lo += l.front().rate;
      hi += l.back().rate;
    }
    const double budget = lo + rng.uniform(0.0, 1.0) * (hi - lo);
    const double nu = rng.uniform(0.0, 3.0);
    for (double v : {nu, 0.0}) {
      const auto want = oracle::enumerate(t, w.normalized, v, budget);
      const auto ex = evaluate(solve_exact(t, w, v, budget), t, w, v);
      const auto he = evaluate(solve_heuristic(t, w, v, budget), t, w, v);
      if (ex.total != want.total) ++exact_mismatch;
      if (ex.rate_used > budget || he.rate_used > budget) ++over_budget;
      if (v == 0.0) {
        if (he.total != want.total) ++zero_mismatch;
      } else if (want.total > 0.0) {
        worst_gap = std::max(worst_gap, he.total / want.total - 1.0);
      }
    }
  }
  const double secs = since(t0);
  report(2, exact_mismatch == 0 && zero_mismatch == 0 && over_budget == 0 && worst_gap <= kHeuristicGap && secs < kAllocTime,
         fmt("%d instances x {nu, 0}; exact != enumeration: %d; heuristic worst gap %.4f%% (tol 5%%), "
             "heuristic != enumeration at nu=0: %d",
             kAllocInstances, exact_mismatch, 100.0 * worst_gap, zero_mismatch) +
             fmt(", over budget %d, %.1f s", over_budget, secs));
}

void criterion3() {
  const auto t0 = Clock::now();
  oracle::GradCheck plain, fused;
  for (std::uint64_t seed = 1; seed <= static_cast<std::uint64_t>(kGradSeeds); ++seed) {
    Rng rng(seed * 7 + 1000);
    nn::Network net({1, 6, 4}, oracle::random_spec(rng), seed);
    nn::Tensor x = oracle::random_tensor({1, 6, 4}, rng);
    oracle::merge(plain, oracle::check_network(net, x, rng));
    // two frozen-core branches into a trunk with every layer kind
    std::vector<nn::FusionModel::Branch> br;
    br.push_back({"history", nn::Network({1, 6, 2}, "gru:3", seed)});
    br.push_back({"cue", nn::Network({1, 8, 4}, "gru:2", seed + 1)});
    nn::FusionModel m(std::move(br), 5, "gru:3,conv:3x3:1,pool:2x2,dense:4:tanh,dense:3:linear", seed);
    std::vector<nn::Tensor> xs{oracle::random_tensor({1, 6, 2}, rng), oracle::random_tensor({1, 8, 4}, rng)};
    oracle::merge(fused, oracle::check_fusion(m, xs, rng));
  }
  oracle::GradCheck total = plain;
  oracle::merge(total, fused);
  const double secs = since(t0);
  const bool ok = total.worst_rel <= kGradTol && total.worst_entry <= kGradTol && plain.checked > 0 &&
                  fused.checked > 0 && total.skipped * 100 < total.checked && secs < kGradTime;
  report(3, ok,
         fmt("%d seeds of random networks + fusion models, %zu + %zu entries checked (%zu skipped at ReLU/pool "
             "switches); worst layer rel err %.2e, worst entry rel err %.2e (tol 1e-4), %.1f s",
             kGradSeeds, plain.checked, fused.checked, total.skipped, total.worst_rel, total.worst_entry, secs));
}

void criterion4() {
  Rng rng(4040);
  double worst = 0.0;
  int crossings = 0;
  for (int i = 0; i < kRemapTraces; ++i) {
    std::vector<HeadState> seq;
    HeadState s{0.0, rng.uniform(-180.0, 180.0), rng.uniform(-60.0, 60.0), rng.uniform(-30.0, 30.0)};
    for (int k = 0; k <= 80; ++k) {
      seq.push_back(s.normalized());
      s.t += kDefaultStep;
      s.pan += rng.uniform(-30.0, 30.0);
      s.tilt = std::clamp(s.tilt + rng.uniform(-3.0, 3.0), -89.0, 89.0);
      s.roll += rng.uniform(-10.0, 10.0);
    }
    for (std::size_t k = 1; k < seq.size(); ++k)
      if (std::abs(seq[k].pan - seq[k - 1].pan) > 180.0) ++crossings;
    const auto w = to_diff_window(seq);
    const auto out = remap(w.diffs, seq.front(), w.norm_scale, kDefaultStep);
    for (std::size_t k = 0; k < out.size(); ++k) {
      worst = std::max(worst, std::abs(shortest_arc(out[k].pan, seq[k + 1].pan)));
      worst = std::max(worst, std::abs(out[k].tilt - seq[k + 1].tilt));
      worst = std::max(worst, std::abs(shortest_arc(out[k].roll, seq[k + 1].roll)));
    }
  }
  report(4, worst <= kRemapTol && crossings > 0,
         fmt("%d traces, %d seam crossings, worst per-step error %.2e deg (tol 1e-9)", kRemapTraces, crossings, worst));
}

void criterion5_6(const fs::path& a, double train_seconds, bool train_ok) {
  const auto t0 = Clock::now();
  bool ok5 = false, ok6 = false;
  std::string d5 = "training command failed", d6 = d5;
  if (train_ok) {
    const auto recs = io::load_recordings(a / "corpus" / "data");
    const auto model = io::load_model(a / "model.json");
    const auto cfg = io::load_train_config(a / "corpus" / "config.json");
    const auto split = nn::split_fold(recs.size(), 0, cfg.seed);
    const std::vector<double> horizons{0.5};
    const auto fusion = evaluate_model(model, recs, split.test, horizons, 4);
    const std::size_t first = std::max(model.layout.history_steps, model.layout.cue_steps);
    const std::size_t steps = horizon_steps(0.5, kDefaultStep);
    PooledEval lin{HorizonErrors(steps), HorizonErrors(steps)};
    for (std::size_t i : split.test) accumulate_eval(lin, PolicyPredictor(Policy::LinReg), recs[i].trace, first, 4);
    const double lin_rate = compensation_rate(lin.pred.mae(steps - 1), lin.none.mae(steps - 1));
    const double fus_rate = fusion.compensation[0];
    const double secs = train_seconds + since(t0);
    ok5 = fus_rate > kCompensationFloor && fus_rate > 0.0 && fus_rate > lin_rate && secs < kTrainTime;
    d5 = fmt("held-out recordings %.0f, tau 0.5 s: fusion compensation %.4f (floor 0.5), linreg %.4f, none 0; "
             "MAE fusion %.3f deg",
             static_cast<double>(split.test.size()), fus_rate, lin_rate, fusion.mae[0]) +
         fmt(", none %.3f deg; training + eval %.0f s", fusion.none_mae[0], secs);

    // roll: every recording, every horizon step, model and linear policies
    std::size_t traces = 0, unequal = 0, states = 0;
    for (const auto& r : recs) {
      const PolicyPredictor fus(model_policy(model.layout), model.layout.history_steps, &model, r.scene, true);
      const PolicyPredictor linp(Policy::LinReg);
      for (const ViewportPredictor* p : {static_cast<const ViewportPredictor*>(&fus), static_cast<const ViewportPredictor*>(&linp)}) {
        PooledEval pool{HorizonErrors(80), HorizonErrors(80)};
        accumulate_eval(pool, *p, r.trace, first, 8);
        for (std::size_t k = 0; k < 80; ++k)
          if (pool.pred.roll_mae(k) != pool.none.roll_mae(k)) ++unequal;
        for (std::size_t now = first; now + 80 < r.trace.size(); now += 64)
          for (const auto& s : p->forecast(r.trace, now, 80)) {
            ++states;
            if (s.roll != r.trace[now].roll) ++unequal;
          }
        ++traces;
      }
    }
    ok6 = unequal == 0 && traces > 0;
    d6 = fmt("%.0f trace/policy pairs, 80 horizon steps each, %.0f forecast states; roll error != none-policy roll "
             "error: %.0f",
             static_cast<double>(traces), static_cast<double>(states), static_cast<double>(unequal));
  }
  report(5, ok5, d5);
  report(6, ok6, d6);
}

void criterion7(const fs::path& a, double sweep_seconds, bool sweep_ok) {
  if (!sweep_ok) {
    report(7, false, "sweep command failed");
    return;
  }
  const auto csv = io::read_csv(a / "sweep.csv",
                                {"policy", "rate_mbps", "folds", "mean_ws_psnr", "std_ws_psnr", "rebuffer_ratio", "total_bits"});
  std::map<std::string, std::map<double, double>> q;
  for (const auto& r : csv.rows) q[r[0]][std::stod(r[1])] = std::stod(r[3]);
  const double rates[] = {6, 8, 10, 12, 14, 16};
  std::size_t ordered = 0, strict = 0, monotone = 0;
  std::string curve;
  for (double r : rates) {
    const double m = q["monolithic"][r], t = q["tiled"][r], p = q["tiled-pred"][r];
    if (p >= t && t >= m) ++ordered;
    if (p > t && t > m) ++strict;
    curve += fmt(" %.0f:%.2f/%.2f/%.2f", r, p, t, m);
  }
  for (const char* pol : {"monolithic", "tiled", "tiled-pred"}) {
    bool up = true;
    for (std::size_t i = 1; i < 6; ++i) up = up && q[pol][rates[i]] >= q[pol][rates[i - 1]];
    if (up) ++monotone;
  }
  const bool ok = csv.rows.size() == 18 && ordered == 6 && strict >= kStrictPoints && monotone == 3 && sweep_seconds < kSweepTime;
  report(7, ok,
         fmt("ordering oracle-pred >= tiled >= mono at %zu/6 rates, strict at %zu (need 4), monotone curves %zu/3, "
             "%.0f s; Mbps:pred/tiled/mono dB",
             ordered, strict, monotone, sweep_seconds) +
             curve);
}

void criterion8(const fs::path& a) {
  // frames of the moving-block fixture and the original + reconstructed frames of the ladder fixture
  std::vector<LumaFrame> frames;
  const auto idx = io::read_csv(a / "frames" / "frames" / "index.csv", {"t", "file", "pan", "tilt", "roll"});
  for (const auto& r : idx.rows) frames.push_back(io::load_raw_y(a / "frames" / "frames" / r[1], 256, 128));
  const auto m = io::load_manifest(a / "ladder" / "manifest.json");
  for (const auto& f : m.frames) {
    frames.push_back(f.original);
    for (const auto& [qp, rec] : f.reconstructed) frames.push_back(rec);
  }
  double worst = 0.0;
  std::size_t order_ok = 0;
  for (const auto& f : frames) {
    const ErpPlane plane(f.width, f.height);
    const std::vector<bool> all(f.width * f.height, true);
    // +-e at every pixel, sign chosen to stay in range
    for (int e : {1, 2, 5, 13}) {
      LumaFrame g = f;
      for (auto& s : g.samples) s = static_cast<std::uint16_t>(s + e <= 255 ? s + e : s - e);
      worst = std::max(worst, std::abs(ws_psnr(f, g, all, plane) - 10.0 * std::log10(255.0 * 255.0 / (e * e))));
    }
    // same error in a band of rows at the pole and at the equator
    const std::size_t band = f.height / 16;
    auto banded = [&](std::size_t y0) {
      LumaFrame g = f;
      for (std::size_t y = y0; y < y0 + band; ++y)
        for (std::size_t x = 0; x < f.width; ++x) {
          auto& s = g.at(x, y);
          s = static_cast<std::uint16_t>(s + 10 <= 255 ? s + 10 : s - 10);
        }
      return ws_psnr(f, g, all, plane);
    };
    if (banded(0) > banded(f.height / 2 - band / 2)) ++order_ok;
  }
  report(8, worst <= kPsnrTol && order_ok == frames.size() && !frames.empty(),
         fmt("%.0f fixture frames; constant-error WS-PSNR vs 10 log10(255^2/e^2): worst |diff| %.2e dB (tol 1e-9); "
             "pole error scores higher than equator error on %.0f/%.0f frames",
             static_cast<double>(frames.size()), worst, static_cast<double>(order_ok), static_cast<double>(frames.size())));
}

void criterion9(const fs::path& a, const fs::path& b, const std::vector<CliRun>& ra, const std::vector<CliRun>& rb) {
  bool codes = true;
  for (std::size_t i = 0; i < ra.size(); ++i) codes = codes && ra[i].code == 0 && rb[i].code == 0;
  const auto ha = hash_tree(a), hb = hash_tree(b);
  std::size_t differ = 0;
  for (const auto& [k, v] : ha) {
    const auto it = hb.find(k);
    if (it == hb.end() || it->second != v) {
      ++differ;
      std::printf("  differs: %s\n", k.c_str());
    }
  }
  differ += hb.size() > ha.size() ? hb.size() - ha.size() : 0;
  std::uint64_t all = 0;
  for (const auto& [k, v] : ha) all = fnv1a(std::to_string(all) + k + std::to_string(v));
  char h[32];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(all));
  report(9, codes && differ == 0 && !ha.empty(),
         fmt("%zu commands run twice, all exit 0: %s; %zu output files, %zu differ; corpus hash %s",
             ra.size(), codes ? "yes" : "no", ha.size(), differ, h));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "orbit_acceptance";
  try {
    criterion1();
    criterion2();
    criterion3();
    criterion4();

    std::printf("building the acceptance corpus (run A)\n");
    const auto ra = run_corpus(work / "a");
    std::printf("rerunning every command (run B)\n");
    const auto rb = run_corpus(work / "b");
    const auto find = [&](const std::string& prefix) {
      for (const auto& r : ra)
        if (r.args.rfind(prefix, 0) == 0) return r;
      return CliRun{};
    };
    const auto train = find("train fusion");
    const auto sweep = find("stream sweep");
    criterion5_6(work / "a", train.seconds, train.code == 0);
    criterion7(work / "a", sweep.seconds, sweep.code == 0);
    criterion8(work / "a");
    criterion9(work / "a", work / "b", ra, rb);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
