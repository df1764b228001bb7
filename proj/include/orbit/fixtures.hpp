#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "orbit/io.hpp"
#include "orbit/motion.hpp"
#include "orbit/synthetic.hpp"

namespace orbit::io {

/// Knobs shared by the fixture kinds. Zero means "kind default".
struct FixtureParams {
  double duration = 0.0;    // seconds of head motion
  std::size_t count = 0;    // recordings, frames or segments
  bool frames = false;      // stream manifests: include decoded frames
};

inline const std::vector<std::string>& fixture_kinds() {
  static const std::vector<std::string> k{"sinusoid", "constant-velocity", "saccade", "saliency",
                                          "frames",   "ladder",            "stream",  "corpus"};
  return k;
}

inline double or_default(double v, double d) { return v > 0.0 ? v : d; }
inline std::size_t or_default(std::size_t v, std::size_t d) { return v > 0 ? v : d; }

/// Head traces of the streaming corpus: a viewer exploring the sphere with
/// large, irregular saccades (60 to 150 degrees, 1 to 3 s apart).
inline std::vector<HeadTrace> exploration_traces(std::size_t count, double duration, std::uint64_t seed) {
  synth::SceneParams sp;
  sp.duration = duration;
  sp.path.saccade_min = 60.0;
  sp.path.saccade_max = 150.0;
  sp.path.dwell_min = 1.0;
  sp.path.dwell_max = 3.0;
  std::vector<HeadTrace> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synth::make_scene(synth::Family::Saccade, sp, seed * 7919 + 100 + i).trace);
  return out;
}

/// Link capacity wandering between 6 and 16 Mbps, one value per second.
inline ThroughputTrace wandering_link(double duration, std::uint64_t seed) {
  Rng rng(seed);
  ThroughputTrace tr;
  double v = 10e6;
  for (double t = 0.0; t < duration; t += 1.0) {
    tr.t.push_back(t);
    tr.bps.push_back(std::round(v));
    v = std::clamp(v + rng.normal(0.0, 1e6), 6e6, 16e6);
  }
  return tr;
}

inline void write_recording(const fs::path& dir, const std::string& stem, const synth::Scene& s) {
  save_trace(dir / "traces" / (stem + ".csv"), s.trace);
  save_map_timeline(dir / "saliency" / stem, s.saliency.times, s.saliency.maps);
}

/// Writes a seeded fixture of the given kind under `out`. Files are fully
/// determined by (kind, seed, params).
inline void generate_fixture(const std::string& kind, std::uint64_t seed, const fs::path& out,
                             const FixtureParams& p = {}) {
  fs::create_directories(out);
  if (kind == "sinusoid") {
    Rng rng(seed);
    save_trace(out / "trace.csv",
               synth::sinusoid_trace(40.0, 4.0, or_default(p.duration, 70.0), kDefaultStep, rng.uniform(0.0, 2.0 * kPi)));
  } else if (kind == "constant-velocity") {
    Rng rng(seed);
    const double speed = rng.uniform(10.0, 40.0);
    save_trace(out / "trace.csv", synth::constant_velocity_trace(speed, 0.0, or_default(p.duration, 70.0)));
  } else if (kind == "saccade") {
    synth::SceneParams sp;
    sp.duration = or_default(p.duration, 70.0);
    save_trace(out / "trace.csv", synth::make_scene(synth::Family::Saccade, sp, seed).trace);
  } else if (kind == "saliency") {
    synth::SceneParams sp;
    sp.duration = or_default(p.duration, 20.0);
    const auto scene = synth::make_scene(synth::Family::Sinusoid, sp, seed);
    save_trace(out / "trace.csv", scene.trace);
    save_map_timeline(out / "saliency", scene.saliency.times, scene.saliency.maps);
  } else if (kind == "frames") {
    // Moving bright block over a texture seen by a head panning at a whole
    // number of pixels per frame, plus the motion maps of each frame pair.
    const std::size_t n = or_default(p.count, std::size_t{20});
    const std::size_t W = 256, H = 128;
    const double fps = 20.0, px_per_frame = 2.0;
    const double pan_step = px_per_frame * 360.0 / static_cast<double>(W);
    Rng rng(seed);
    const long bx = static_cast<long>(rng.index(W)), by = static_cast<long>(H / 4 + rng.index(H / 2));
    std::vector<double> times;
    std::vector<GrayMap> maps;
    std::vector<HeadState> heads;
    std::string index = "t,file,pan,tilt,roll\n";
    LumaFrame prev;
    HeadState head_prev;
    for (std::size_t k = 0; k < n; ++k) {
      const HeadState head{static_cast<double>(k) / fps, wrap180(pan_step * static_cast<double>(k)), 0.0, 0.0};
      const long ego = -static_cast<long>(px_per_frame) * static_cast<long>(k);
      LumaFrame f = synth::textured_frame(W, H, seed, ego);
      synth::draw_block(f, bx + ego + 4 * static_cast<long>(k), by, 12, 250);
      char name[32];
      std::snprintf(name, sizeof name, "frame_%04zu.y", k);
      save_raw_y(out / "frames" / name, f);
      index += num(head.t) + "," + name + "," + num(head.pan) + "," + num(head.tilt) + "," + num(head.roll) + "\n";
      if (k > 0) {
        times.push_back(head.t);
        maps.push_back(motion_map(prev, f, head_prev, head));
        heads.push_back(head);
      }
      prev = std::move(f);
      head_prev = head;
    }
    write_text(out / "frames" / "index.csv", index);
    json meta = {{"width", W}, {"height", H}, {"fps", fps}, {"count", n}};
    write_text(out / "frames" / "frames.json", meta.dump(1) + "\n");
    save_map_timeline(out / "motion", times, maps, heads);
  } else if (kind == "ladder") {
    synth::ManifestParams mp;
    mp.segments = or_default(p.count, std::size_t{10});
    mp.frames = p.frames;
    save_manifest(out / "manifest.json", synth::make_manifest(mp, seed));
  } else if (kind == "stream") {
    synth::ManifestParams mp;
    mp.segments = or_default(p.count, std::size_t{60});
    mp.frames = p.frames;
    const double dur = static_cast<double>(mp.segments) * mp.segment_duration + 1.0;
    save_manifest(out / "manifest.json", synth::make_manifest(mp, seed));
    save_throughput(out / "throughput.csv", wandering_link(dur, seed));
    const auto traces = exploration_traces(3, or_default(p.duration, dur), seed);
    for (std::size_t i = 0; i < traces.size(); ++i)
      save_trace(out / "traces" / ("viewer_" + std::to_string(i) + ".csv"), traces[i]);
  } else if (kind == "corpus") {
    // training recordings, streaming fixture and default configurations
    synth::SceneParams sp;
    sp.duration = or_default(p.duration, 20.0);
    const std::size_t n = or_default(p.count, std::size_t{24});
    const synth::Family fams[] = {synth::Family::Sinusoid, synth::Family::ConstantVelocity, synth::Family::Saccade};
    for (std::size_t i = 0; i < n; ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "rec_%02zu", i);
      write_recording(out / "data", stem, synth::make_scene(fams[i % 3], sp, seed * 7919 + i));
    }
    generate_fixture("stream", seed, out / "stream", FixtureParams{0.0, 0, p.frames});
    const FusionSpec spec;
    json sj = {{"history_core", spec.history_core},
               {"cue_core", spec.cue_core},
               {"trunk", spec.trunk},
               {"seed", spec.seed},
               {"history_steps", spec.layout.history_steps},
               {"cue_steps", spec.layout.cue_steps},
               {"horizon_steps", spec.layout.horizon_steps},
               {"hold_roll", true},
               {"cues", {to_string(CueSource::SaliencyMax)}}};
    write_text(out / "spec.json", sj.dump(1) + "\n");
    json cj = {{"learning_rate", 3e-3}, {"batch_size", 64}, {"max_epochs", 200}, {"patience", 10},
               {"decay_every", 10},     {"decay_factor", 0.9}, {"folds", 6},      {"seed", seed}};
    write_text(out / "config.json", cj.dump(1) + "\n");
  } else {
    std::string known;
    for (const auto& k : fixture_kinds()) known += (known.empty() ? "" : ", ") + k;
    fail(ErrorCode::InvalidArgument, "unknown fixture kind '" + kind + "' (known: " + known + ")");
  }
}

}  // namespace orbit::io
