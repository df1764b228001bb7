#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "orbit/neural.hpp"
#include "orbit/predictor.hpp"

namespace orbit {

/// Architecture of a fusion forecaster. Cores are pre-trained with a
/// linear output head, which is dropped when they are fused.
struct FusionSpec {
  PredictorLayout layout;
  std::string history_core = "gru:12";
  std::string cue_core = "gru:8";
  std::string trunk = "gru:16,conv:5x5:1,pool:2x2,dense:30:relu";
  std::uint64_t seed = 7;

  std::size_t core_layers(const std::string& spec) const {
    return static_cast<std::size_t>(std::count(spec.begin(), spec.end(), ',')) + 1;
  }
  std::string head() const { return "dense:" + std::to_string(layout.output_size()) + ":linear"; }
  /// Trunk including the output head.
  std::string full_trunk() const { return trunk + "," + head(); }
};

inline nn::Shape branch_input_shape(const PredictorLayout& layout, std::size_t branch) {
  return branch == 0 ? nn::Shape{1, layout.history_steps, layout.axes()} : nn::Shape{1, layout.cue_steps, 4};
}

inline std::string branch_name(const PredictorLayout& layout, std::size_t branch) {
  return branch == 0 ? "history" : to_string(layout.cues[branch - 1]);
}

/// Samples restricted to one input branch.
inline std::vector<nn::Sample> branch_samples(std::span<const nn::Sample> data, std::size_t branch) {
  std::vector<nn::Sample> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back({{s.inputs.at(branch)}, s.target});
  return out;
}

struct StageReport {
  std::string stage;
  nn::TrainReport report;
};

struct FusionTraining {
  PredictorModel model;
  std::vector<StageReport> stages;
};

/// Pre-trains every branch on its own, freezes the cores, then trains the
/// fusion trunk.
inline FusionTraining train_fusion(const FusionSpec& spec, std::span<const nn::Sample> train_set,
                                   std::span<const nn::Sample> val_set, const nn::TrainConfig& cfg,
                                   const std::function<void(const std::string&)>& log = {}) {
  const auto& layout = spec.layout;
  const std::size_t n_branches = 1 + layout.cues.size();
  FusionTraining out;
  std::vector<nn::FusionModel::Branch> cores;
  for (std::size_t b = 0; b < n_branches; ++b) {
    const std::string core = b == 0 ? spec.history_core : spec.cue_core;
    nn::Network net(branch_input_shape(layout, b), core + "," + spec.head(), spec.seed + 101 * (b + 1));
    const auto tr = branch_samples(train_set, b), va = branch_samples(val_set, b);
    nn::TrainConfig c = cfg;
    c.seed = cfg.seed + 11 * (b + 1);
    auto rep = nn::train(net, std::span<const nn::Sample>(tr), std::span<const nn::Sample>(va), c);
    if (log)
      log("pretrained " + branch_name(layout, b) + ": epochs=" + std::to_string(rep.epochs_run) +
          " best_val=" + std::to_string(rep.best_val_loss));
    out.stages.push_back({branch_name(layout, b), std::move(rep)});
    nn::Network prefix = net.prefix(spec.core_layers(core));
    prefix.freeze();
    cores.push_back({branch_name(layout, b), std::move(prefix)});
  }
  nn::FusionModel fusion(std::move(cores), layout.history_steps, spec.full_trunk(), spec.seed);
  nn::TrainConfig c = cfg;
  c.seed = cfg.seed + 7919;
  auto rep = nn::train(fusion, train_set, val_set, c);
  if (log) log("trained fusion: epochs=" + std::to_string(rep.epochs_run) + " best_val=" + std::to_string(rep.best_val_loss));
  fusion.epochs_run = rep.epochs_run;
  fusion.best_val_loss = rep.best_val_loss;
  fusion.seed = spec.seed;
  out.stages.push_back({"fusion", std::move(rep)});
  out.model = PredictorModel{std::move(fusion), layout};
  return out;
}

/// History-only forecaster: the pre-trained core with its own head.
inline PredictorModel train_history_only(const FusionSpec& spec, std::span<const nn::Sample> train_set,
                                         std::span<const nn::Sample> val_set, const nn::TrainConfig& cfg) {
  FusionSpec s = spec;
  s.layout.cues.clear();
  const auto tr = branch_samples(train_set, 0), va = branch_samples(val_set, 0);
  nn::Network net(branch_input_shape(s.layout, 0), s.history_core, s.seed + 101);
  std::vector<nn::FusionModel::Branch> branches;
  branches.push_back({"history", std::move(net)});
  nn::FusionModel m(std::move(branches), s.layout.history_steps, s.head(), s.seed);
  auto rep = nn::train(m, std::span<const nn::Sample>(tr), std::span<const nn::Sample>(va), cfg);
  m.epochs_run = rep.epochs_run;
  m.best_val_loss = rep.best_val_loss;
  m.seed = s.seed;
  return PredictorModel{std::move(m), s.layout};
}

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::size_t> train, val, test;  // recording indices
  double best_val_loss = 0.0;
  PredictionEval eval;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  std::size_t best_fold = 0;
  PredictorModel best;
};

inline std::vector<nn::Sample> samples_of(std::span<const Recording> recs, std::span<const std::size_t> idx,
                                          const PredictorLayout& layout, std::size_t stride) {
  std::vector<nn::Sample> out;
  for (std::size_t i : idx) {
    auto s = make_samples(recs[i], layout, stride);
    std::move(s.begin(), s.end(), std::back_inserter(out));
  }
  return out;
}

/// Pooled evaluation of a trained model over held-out recordings.
inline PredictionEval evaluate_model(const PredictorModel& model, std::span<const Recording> recs,
                                     std::span<const std::size_t> idx, std::span<const double> horizons,
                                     std::size_t stride) {
  const double dt = recs.empty() ? kDefaultStep : recs[idx.front()].trace.dt;
  std::size_t steps = 0;
  for (double h : horizons) steps = std::max(steps, horizon_steps(h, dt));
  PooledEval pool{HorizonErrors(steps), HorizonErrors(steps)};
  const std::size_t first = std::max(model.layout.history_steps, model.layout.cue_steps);
  for (std::size_t i : idx) {
    PolicyPredictor p(model_policy(model.layout), model.layout.history_steps, &model,
                      recs[i].scene, model.layout.hold_roll);
    accumulate_eval(pool, p, recs[i].trace, first, stride);
  }
  PredictionEval e;
  double acc = 0.0;
  for (double h : horizons) {
    const std::size_t k = horizon_steps(h, dt) - 1;
    e.horizons.push_back(h);
    e.mae.push_back(pool.pred.mae(k));
    e.rmse.push_back(pool.pred.rmse(k));
    e.none_mae.push_back(pool.none.mae(k));
    e.roll_mae.push_back(pool.pred.roll_mae(k));
    e.none_roll_mae.push_back(pool.none.roll_mae(k));
    e.compensation.push_back(compensation_rate(pool.pred.mae(k), pool.none.mae(k)));
    acc += e.compensation.back();
  }
  e.mean_compensation = acc / static_cast<double>(horizons.size());
  return e;
}

/// k-fold protocol over recordings: each fold shuffles the recordings into
/// 60/20/20 train/validation/test parts, trains and scores on the test part.
inline CrossValidation cross_validate(const FusionSpec& spec, std::span<const Recording> recs,
                                      const nn::TrainConfig& cfg, std::size_t stride,
                                      std::span<const double> horizons,
                                      const std::function<void(const std::string&)>& log = {}) {
  CrossValidation cv;
  double best = INFINITY;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    const auto split = nn::split_fold(recs.size(), f, cfg.seed);
    const auto tr = samples_of(recs, split.train, spec.layout, stride);
    const auto va = samples_of(recs, split.val, spec.layout, stride);
    require(!tr.empty() && !va.empty(), ErrorCode::InvalidArgument,
            "empty fold " + std::to_string(f) + ": recordings too short for the model windows");
    if (log) log("fold " + std::to_string(f) + ": " + std::to_string(tr.size()) + " train / " +
                 std::to_string(va.size()) + " val samples");
    auto t = train_fusion(spec, tr, va, cfg, log);
    FoldResult r{f, split.train, split.val, split.test, t.model.net.best_val_loss,
                 evaluate_model(t.model, recs, split.test, horizons, stride)};
    if (r.best_val_loss < best) {
      best = r.best_val_loss;
      cv.best_fold = f;
      cv.best = std::move(t.model);
    }
    cv.folds.push_back(std::move(r));
  }
  return cv;
}

}  // namespace orbit
