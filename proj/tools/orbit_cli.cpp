// orbit: batch front end for the streaming / prediction toolkit.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "orbit/orbit.hpp"

namespace fs = std::filesystem;
using namespace orbit;
using orbit::io::num;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInfeasible = 3 };

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return kUsage;
    case ErrorCode::Infeasible: return kInfeasible;
    default: return kData;
  }
}

void warn_all(const io::Warnings& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

/// "0.1..1.0" (step 0.1), "0.1..1.0:0.05", or a comma list.
std::vector<double> parse_horizons(const std::string& s) {
  std::vector<double> out;
  const auto dots = s.find("..");
  if (dots == std::string::npos) {
    for (const auto& tok : io::split(s, ','))
      out.push_back(io::parse_number(io::trim(tok), "--horizons", "horizon"));
  } else {
    const double lo = io::parse_number(s.substr(0, dots), "--horizons", "start");
    std::string rest = s.substr(dots + 2);
    double step = 0.1;
    if (const auto c = rest.find(':'); c != std::string::npos) {
      step = io::parse_number(rest.substr(c + 1), "--horizons", "step");
      rest = rest.substr(0, c);
    }
    const double hi = io::parse_number(rest, "--horizons", "end");
    require(step > 0.0 && hi >= lo, ErrorCode::InvalidArgument, "--horizons: empty range");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) {
      // 12 significant digits drop the float noise of lo + k step
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.12g", lo + static_cast<double>(k) * step);
      out.push_back(std::strtod(buf, nullptr));
    }
  }
  for (double h : out)
    require(h > 0.0 && h <= 1.0 + 1e-12, ErrorCode::InvalidArgument, "horizons must lie in (0, 1] s");
  require(!out.empty(), ErrorCode::InvalidArgument, "--horizons: no values");
  return out;
}

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& tok : io::split(s, ',')) out.push_back(io::parse_number(io::trim(tok), flag, "value"));
  return out;
}

/// A file, or every .csv file of a directory in name order.
std::vector<fs::path> trace_files(const fs::path& p) {
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorCode::DataError, p.string() + ": no trace files");
  return out;
}

SceneCues load_scene(const std::string& saliency, const std::string& motion) {
  SceneCues s;
  if (!saliency.empty()) s.saliency = std::make_shared<CueTimeline>(io::load_map_timeline(saliency));
  if (!motion.empty()) s.motion = std::make_shared<CueTimeline>(io::load_map_timeline(motion));
  return s;
}

/// Predictor named on the command line. `model` must outlive the result.
std::unique_ptr<ViewportPredictor> make_predictor(const std::string& name, const PredictorModel* model,
                                                  const SceneCues& scene) {
  if (name == "oracle") return std::make_unique<OraclePredictor>();
  const Policy p = parse_policy(name);
  if (p == Policy::HOnly || p == Policy::FusionMax || p == Policy::FusionCentroid) {
    require(model != nullptr, ErrorCode::InvalidArgument, "policy '" + name + "' needs --model");
    return std::make_unique<PolicyPredictor>(p, model->layout.history_steps, model, scene, model->layout.hold_roll);
  }
  return std::make_unique<PolicyPredictor>(p);
}

struct Options {
  std::string workdir = ".";
  std::uint64_t seed = 1;

  // fixtures generate
  std::string kind, out;
  io::FixtureParams fixture;

  // predict eval
  std::string trace, policy = "linreg", model, saliency, motion, horizons = "0.1..1.0";
  std::size_t stride = 4;

  // train fusion
  std::string spec, data, config;
  std::size_t folds = 0, train_stride = 8;
  std::string report;

  // tiles optimize
  std::string manifest, viewport = "0,0,90,90", solver = "heuristic", export_qcp;
  std::size_t segment = 0;
  double budget = 0.0, nu = 0.5;

  // stream simulate / sweep
  std::string throughput, stream_policy = "tiled-pred", predictor = "oracle", rates = "6,8,10,12,14,16",
                          policies = "monolithic,tiled,tiled-pred", detail;
  double buffer = 4.0, startup_rate = 4e6;
};

SessionConfig session_config(const Options& o) {
  SessionConfig c;
  c.nu = o.nu;
  c.buffer_capacity = o.buffer;
  c.startup_rate = o.startup_rate;
  c.seed = o.seed;
  return c;
}

int cmd_fixtures(const Options& o) {
  io::generate_fixture(o.kind, o.seed, o.out, o.fixture);
  std::cout << "wrote " << o.kind << " fixture to " << o.out << "\n";
  return kOk;
}

int cmd_predict(const Options& o) {
  const auto horizons = parse_horizons(o.horizons);
  io::Warnings w;
  const HeadTrace trace = io::load_trace(o.trace, kDefaultStep, &w);
  warn_all(w);
  std::unique_ptr<PredictorModel> model;
  if (!o.model.empty()) model = std::make_unique<PredictorModel>(io::load_model(o.model));
  const SceneCues scene = load_scene(o.saliency, o.motion);
  const auto pred = make_predictor(o.policy, model.get(), scene);
  const std::size_t first = model ? std::max(model->layout.history_steps, model->layout.cue_steps)
                                  : (o.policy == "none" || o.policy == "oracle" ? 0 : 20);
  const PredictionEval e = evaluate_predictor(*pred, trace, horizons, first, o.stride);
  std::string csv = "horizon,mae,rmse,none_mae,roll_mae,none_roll_mae,compensation\n";
  for (std::size_t i = 0; i < e.horizons.size(); ++i)
    csv += num(e.horizons[i]) + "," + num(e.mae[i]) + "," + num(e.rmse[i]) + "," + num(e.none_mae[i]) + "," +
           num(e.roll_mae[i]) + "," + num(e.none_roll_mae[i]) + "," + num(e.compensation[i]) + "\n";
  io::write_text(o.out, csv);
  std::cout << pred->name() << ": mean compensation rate " << num(e.mean_compensation) << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const FusionSpec spec = io::load_fusion_spec(o.spec);
  nn::TrainConfig cfg = io::load_train_config(o.config);
  if (o.folds > 0) cfg.folds = o.folds;
  io::Warnings w;
  const auto recs = io::load_recordings(o.data, kDefaultStep, &w);
  warn_all(w);
  const std::vector<double> horizons{0.1, 0.25, 0.5, 0.75, 1.0};
  const auto cv = cross_validate(spec, recs, cfg, o.train_stride, horizons,
                                 [](const std::string& s) { std::cerr << s << "\n"; });
  io::save_model(o.out, cv.best);
  if (!o.report.empty()) {
    std::string csv = "fold,best_val_loss,horizon,mae,none_mae,compensation\n";
    for (const auto& f : cv.folds)
      for (std::size_t i = 0; i < f.eval.horizons.size(); ++i)
        csv += std::to_string(f.fold) + "," + num(f.best_val_loss) + "," + num(f.eval.horizons[i]) + "," +
               num(f.eval.mae[i]) + "," + num(f.eval.none_mae[i]) + "," + num(f.eval.compensation[i]) + "\n";
    io::write_text(o.report, csv);
  }
  std::cout << "best fold " << cv.best_fold << " (validation loss " << num(cv.best.net.best_val_loss) << ") saved to "
            << o.out << "\n";
  return kOk;
}

int cmd_tiles(const Options& o) {
  const Manifest m = io::load_manifest(o.manifest);
  require(o.segment < m.segment_count(), ErrorCode::InvalidArgument, "--segment beyond the manifest");
  const auto v = parse_list(o.viewport, "--viewport");
  require(v.size() == 4, ErrorCode::InvalidArgument, "--viewport expects pan,tilt,fovh,fovv");
  Viewport vp{v[0], v[1], v[2], v[3]};
  vp.validate();
  std::vector<std::string> warn;
  const DistortionTable table = m.table(o.segment, &warn);
  warn_all(warn);
  const TileWeights weights = tile_weights(m.grid, tiles_in_viewport(m.grid, vp));
  if (!o.export_qcp.empty()) io::write_text(o.export_qcp, export_qcp(table, weights, o.nu, o.budget));
  require(o.solver == "exact" || o.solver == "heuristic", ErrorCode::InvalidArgument,
          "--solver must be exact or heuristic");
  const Allocation a = o.solver == "exact" ? solve_exact(table, weights, o.nu, o.budget)
                                           : solve_heuristic(table, weights, o.nu, o.budget);
  const ObjectiveReport r = evaluate(a, table, weights, o.nu);
  std::string csv = "tile,row,col,qp,rate,distortion,corrected,weight\n";
  for (std::size_t n = 0; n < table.size(); ++n) {
    const auto t = m.grid.unflat(n);
    const auto& rep = table.tiles[n][a.choice[n]];
    csv += std::to_string(n) + "," + std::to_string(t.row) + "," + std::to_string(t.col) + "," +
           std::to_string(rep.qp) + "," + num(rep.rate) + "," + num(rep.distortion) + "," + num(rep.corrected) + "," +
           num(weights.normalized[n]) + "\n";
  }
  if (o.out.empty())
    std::cout << csv;
  else
    io::write_text(o.out, csv);
  std::cout << "lambda " << num(r.lambda) << " xi " << num(r.xi) << " objective " << num(r.total) << " rate "
            << num(r.rate_used) << "\n";
  return kOk;
}

std::string segment_csv(const SessionStats& st) {
  std::string csv =
      "segment,request_time,playhead,target_rate,rate_used,bits,download_time,rebuffer,buffer_after,viewport_tiles,"
      "fallback,ws_psnr\n";
  for (const auto& s : st.segments)
    csv += std::to_string(s.index) + "," + num(s.request_time) + "," + num(s.playhead) + "," + num(s.target_rate) + "," +
           num(s.rate_used) + "," + num(s.bits) + "," + num(s.download_time) + "," + num(s.rebuffer) + "," +
           num(s.buffer_after) + "," + std::to_string(s.viewport_tiles) + "," + (s.fallback ? "1" : "0") + "," +
           num(s.ws_psnr) + "\n";
  return csv;
}

int cmd_simulate(const Options& o) {
  const Manifest m = io::load_manifest(o.manifest);
  const ThroughputTrace link = io::load_throughput(o.throughput);
  io::Warnings w;
  const HeadTrace trace = io::load_trace(o.trace, kDefaultStep, &w);
  warn_all(w);
  std::unique_ptr<PredictorModel> model;
  if (!o.model.empty()) model = std::make_unique<PredictorModel>(io::load_model(o.model));
  const SceneCues scene = load_scene(o.saliency, o.motion);
  SessionConfig cfg = session_config(o);
  cfg.policy = parse_stream_policy(o.stream_policy);
  std::unique_ptr<ViewportPredictor> pred;
  if (cfg.policy == StreamPolicy::TiledPred) {
    pred = make_predictor(o.predictor, model.get(), scene);
    cfg.predictor = pred.get();
  }
  const SessionStats st = run_session(m, link, trace, cfg);
  for (const auto& l : st.log) std::cerr << l << "\n";
  io::write_text(o.out, segment_csv(st));
  std::cout << st.policy << ": mean ws-psnr " << num(st.mean_ws_psnr) << " dB, rebuffer ratio "
            << num(st.rebuffer_ratio) << ", startup " << num(st.startup_delay) << " s\n";
  return kOk;
}

int cmd_sweep(const Options& o) {
  const Manifest m = io::load_manifest(o.manifest);
  std::vector<HeadTrace> traces;
  io::Warnings w;
  for (const auto& f : trace_files(o.trace)) traces.push_back(io::load_trace(f, kDefaultStep, &w));
  warn_all(w);
  const auto rates = parse_list(o.rates, "--rates");
  std::unique_ptr<PredictorModel> model;
  if (!o.model.empty()) model = std::make_unique<PredictorModel>(io::load_model(o.model));
  const auto pred = make_predictor(o.predictor, model.get(), {});
  std::vector<SweepPolicy> policies;
  for (const auto& name : io::split(o.policies, ',')) {
    const StreamPolicy p = parse_stream_policy(io::trim(name));
    SweepPolicy sp{p, io::trim(name), {}};
    if (p == StreamPolicy::TiledPred) sp.predictors = {pred.get()};
    policies.push_back(sp);
  }
  const auto rows = sweep_rates(m, rates, traces, policies, session_config(o));
  // one row per (policy, rate): mean and spread over head traces
  std::string csv = "policy,rate_mbps,folds,mean_ws_psnr,std_ws_psnr,rebuffer_ratio,total_bits\n";
  std::string detail = "policy,rate_mbps,fold,mean_ws_psnr,rebuffer_ratio,total_bits\n";
  const std::size_t F = traces.size();
  for (std::size_t i = 0; i < rows.size(); i += F) {
    double q = 0.0, q2 = 0.0, rb = 0.0, bits = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      const auto& r = rows[i + f];
      q += r.stats.mean_ws_psnr;
      rb += r.stats.rebuffer_ratio;
      bits += r.stats.total_bits;
      detail += r.policy + "," + num(r.rate_mbps) + "," + std::to_string(r.fold) + "," + num(r.stats.mean_ws_psnr) +
                "," + num(r.stats.rebuffer_ratio) + "," + num(r.stats.total_bits) + "\n";
    }
    const double n = static_cast<double>(F), mean = q / n;
    for (std::size_t f = 0; f < F; ++f) q2 += std::pow(rows[i + f].stats.mean_ws_psnr - mean, 2);
    csv += rows[i].policy + "," + num(rows[i].rate_mbps) + "," + std::to_string(F) + "," + num(mean) + "," +
           num(std::sqrt(q2 / n)) + "," + num(rb / n) + "," + num(bits / n) + "\n";
  }
  io::write_text(o.out, csv);
  if (!o.detail.empty()) io::write_text(o.detail, detail);
  std::cout << rows.size() / F << " rows written to " << o.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbit: viewport prediction and tile-based 360 video streaming experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--workdir", o.workdir, "Directory all relative paths are resolved against")->capture_default_str();
  app.add_option("--seed", o.seed, "Seed for every random choice")->capture_default_str();

  auto* fixtures = app.add_subcommand("fixtures", "Synthetic data sets");
  fixtures->require_subcommand(1);
  auto* gen = fixtures->add_subcommand("generate", "Write a seeded fixture");
  gen->add_option("--kind", o.kind, "Fixture kind")->required()->check(CLI::IsMember(io::fixture_kinds()));
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--duration", o.fixture.duration, "Seconds of head motion (0 = kind default)");
  gen->add_option("--count", o.fixture.count, "Recordings, frames or segments (0 = kind default)");
  gen->add_flag("--frames", o.fixture.frames, "Include decoded frames in stream manifests");

  auto* predict = app.add_subcommand("predict", "Viewport prediction");
  predict->require_subcommand(1);
  auto* eval = predict->add_subcommand("eval", "Per-horizon error and compensation rate of a policy");
  eval->add_option("--trace", o.trace, "Head trace CSV")->required();
  eval->add_option("--policy", o.policy, "none, linreg, h-only, fusion-max, fusion-centroid or oracle")
      ->capture_default_str();
  eval->add_option("--model", o.model, "Fusion checkpoint (h-only and fusion policies)");
  eval->add_option("--saliency", o.saliency, "Saliency map timeline directory");
  eval->add_option("--motion", o.motion, "Motion map timeline directory");
  eval->add_option("--horizons", o.horizons, "Horizons in seconds: a..b[:step] or a comma list")->capture_default_str();
  eval->add_option("--stride", o.stride, "Samples between evaluated instants")->capture_default_str()->check(
      CLI::PositiveNumber);
  eval->add_option("--out", o.out, "Output CSV")->required();

  auto* train = app.add_subcommand("train", "Model training");
  train->require_subcommand(1);
  auto* fusion = train->add_subcommand("fusion", "Cross-validated training of the fusion predictor");
  fusion->add_option("--spec", o.spec, "Model spec JSON")->required();
  fusion->add_option("--data", o.data, "Recordings directory (traces/, saliency/, motion/)")->required();
  fusion->add_option("--config", o.config, "Training config JSON")->required();
  fusion->add_option("--out", o.out, "Checkpoint of the best fold")->required();
  fusion->add_option("--folds", o.folds, "Folds to run (0 = config value)");
  fusion->add_option("--stride", o.train_stride, "Samples between training windows")->capture_default_str()->check(
      CLI::PositiveNumber);
  fusion->add_option("--report", o.report, "Per-fold evaluation CSV");

  auto* tiles = app.add_subcommand("tiles", "Tile rate allocation");
  tiles->require_subcommand(1);
  auto* opt = tiles->add_subcommand("optimize", "Choose one representation per tile");
  opt->add_option("--manifest", o.manifest, "Manifest JSON")->required();
  opt->add_option("--segment", o.segment, "Segment index")->capture_default_str();
  opt->add_option("--viewport", o.viewport, "pan,tilt,fovh,fovv in degrees")->capture_default_str();
  opt->add_option("--budget", o.budget, "Rate budget, bits per second")->required();
  opt->add_option("--nu", o.nu, "Weight of the spatial quality variance")->capture_default_str();
  opt->add_option("--solver", o.solver, "exact or heuristic")->capture_default_str();
  opt->add_option("--export-qcp", o.export_qcp, "Write the linearized program in LP format");
  opt->add_option("--out", o.out, "Allocation CSV (default: stdout)");

  auto* stream = app.add_subcommand("stream", "Streaming simulation");
  stream->require_subcommand(1);
  auto* sim = stream->add_subcommand("simulate", "One session over a throughput trace");
  sim->add_option("--manifest", o.manifest, "Manifest JSON")->required();
  sim->add_option("--throughput", o.throughput, "Throughput CSV")->required();
  sim->add_option("--trace", o.trace, "Head trace CSV")->required();
  sim->add_option("--policy", o.stream_policy, "monolithic, tiled (tiled-no-pred) or tiled-pred")
      ->capture_default_str();
  sim->add_option("--predictor", o.predictor, "Predictor for tiled-pred: oracle or a prediction policy")
      ->capture_default_str();
  sim->add_option("--model", o.model, "Fusion checkpoint");
  sim->add_option("--saliency", o.saliency, "Saliency map timeline directory");
  sim->add_option("--motion", o.motion, "Motion map timeline directory");
  sim->add_option("--nu", o.nu, "Weight of the spatial quality variance")->capture_default_str();
  sim->add_option("--buffer", o.buffer, "Buffer capacity, seconds")->capture_default_str();
  sim->add_option("--startup-rate", o.startup_rate, "Rate target before any throughput sample, bps")
      ->capture_default_str();
  sim->add_option("--out", o.out, "Per-segment CSV")->required();

  auto* sweep = stream->add_subcommand("sweep", "Sessions over constant-rate links");
  sweep->add_option("--manifest", o.manifest, "Manifest JSON")->required();
  sweep->add_option("--trace", o.trace, "Head trace CSV or directory of traces")->required();
  sweep->add_option("--rates", o.rates, "Link rates, Mbps")->capture_default_str();
  sweep->add_option("--policies", o.policies, "Comma list of streaming policies")->capture_default_str();
  sweep->add_option("--predictor", o.predictor, "Predictor for tiled-pred: oracle or a prediction policy")
      ->capture_default_str();
  sweep->add_option("--model", o.model, "Fusion checkpoint");
  sweep->add_option("--nu", o.nu, "Weight of the spatial quality variance")->capture_default_str();
  sweep->add_option("--buffer", o.buffer, "Buffer capacity, seconds")->capture_default_str();
  sweep->add_option("--startup-rate", o.startup_rate, "Rate target before any throughput sample, bps")
      ->capture_default_str();
  sweep->add_option("--out", o.out, "Per policy and rate CSV")->required();
  sweep->add_option("--detail", o.detail, "Per policy, rate and trace CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (o.workdir != ".") fs::current_path(o.workdir);
    if (gen->parsed()) return cmd_fixtures(o);
    if (eval->parsed()) return cmd_predict(o);
    if (fusion->parsed()) return cmd_train(o);
    if (opt->parsed()) return cmd_tiles(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (sweep->parsed()) return cmd_sweep(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
