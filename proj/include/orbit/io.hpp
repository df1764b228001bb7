#pragma once

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "orbit/common.hpp"
#include "orbit/neural.hpp"
#include "orbit/prediction.hpp"
#include "orbit/predictor.hpp"
#include "orbit/quality.hpp"
#include "orbit/simulation.hpp"
#include "orbit/training.hpp"

namespace orbit::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

using Warnings = std::vector<std::string>;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::DataError, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::DataError, "cannot write " + p.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::DataError, "write failed: " + p.string());
}

/// Shortest text that parses back to the same double.
inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Parses a comma-separated file whose header must equal `expected`
/// (extra leading columns are not allowed).
inline CsvTable read_csv(const fs::path& p, const std::vector<std::string>& expected) {
  std::istringstream in(read_text(p));
  CsvTable t;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto cells = split(line, ',');
    for (auto& c : cells) c = trim(c);
    if (t.header.empty()) {
      t.header = cells;
      require(t.header == expected, ErrorCode::DataError,
              p.string() + ":" + std::to_string(no) + ": unexpected header '" + line + "'");
      continue;
    }
    require(cells.size() == expected.size(), ErrorCode::DataError,
            p.string() + ":" + std::to_string(no) + ": expected " + std::to_string(expected.size()) + " fields, got " +
                std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(no);
  }
  require(!t.header.empty(), ErrorCode::DataError, p.string() + ": empty file");
  return t;
}

/// Parses a number; `allow_inf` admits +inf (not NaN).
inline double parse_number(const std::string& s, const std::string& where, const std::string& field,
                           bool allow_inf = false) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  require(!s.empty() && end == s.c_str() + s.size(), ErrorCode::DataError,
          where + ": field '" + field + "' is not a number: '" + s + "'");
  require(!std::isnan(v) && (std::isfinite(v) || (allow_inf && v > 0)), ErrorCode::NonFinite,
          where + ": field '" + field + "' is not finite");
  return v;
}

// ---- head traces --------------------------------------------------------------

/// Linear resampling onto t0 + k dt, k = 0 .. floor(duration / dt),
/// interpolating pan and roll along the shortest arc.
inline HeadTrace resample(const std::vector<HeadState>& src, double dt) {
  require(src.size() >= 2, ErrorCode::DataError, "need at least two samples to resample");
  const double t0 = src.front().t, dur = src.back().t - t0;
  const auto n = static_cast<std::size_t>(std::floor(dur / dt + 1e-9)) + 1;
  HeadTrace out{dt, {}};
  out.samples.reserve(n);
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    while (i + 2 < src.size() && src[i + 1].t <= t) ++i;
    const auto& a = src[i];
    const auto& b = src[i + 1];
    const double f = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
    out.samples.push_back(HeadState{t, a.pan + f * shortest_arc(a.pan, b.pan), a.tilt + f * (b.tilt - a.tilt),
                                    a.roll + f * shortest_arc(a.roll, b.roll)}
                              .normalized());
  }
  return out;
}

/// Reads `t,pan,tilt,roll` (seconds, degrees). Angles outside the canonical
/// range are wrapped with a warning; sources not already on the dt grid
/// (within 1 %) are resampled.
inline HeadTrace load_trace(const fs::path& p, double dt = kDefaultStep, Warnings* warnings = nullptr) {
  require(dt > 0.0, ErrorCode::InvalidArgument, "sampling period must be positive");
  const auto t = read_csv(p, {"t", "pan", "tilt", "roll"});
  std::vector<HeadState> src;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = p.string() + ":" + std::to_string(t.lines[r]);
    HeadState s{parse_number(t.rows[r][0], where, "t"), parse_number(t.rows[r][1], where, "pan"),
                parse_number(t.rows[r][2], where, "tilt"), parse_number(t.rows[r][3], where, "roll")};
    require(s.tilt >= -90.0 && s.tilt <= 90.0, ErrorCode::DataError, where + ": tilt outside [-90, 90]");
    if (s.pan < -180.0 || s.pan >= 180.0) {
      const double w = wrap180(s.pan);
      if (warnings) warnings->push_back(where + ": pan " + num(s.pan) + " wrapped to " + num(w));
      s.pan = w;
    }
    if (s.roll < -180.0 || s.roll >= 180.0) {
      const double w = wrap180(s.roll);
      if (warnings) warnings->push_back(where + ": roll " + num(s.roll) + " wrapped to " + num(w));
      s.roll = w;
    }
    if (!src.empty())
      require(s.t > src.back().t, ErrorCode::DataError, where + ": timestamps not strictly increasing");
    src.push_back(s);
  }
  require(!src.empty(), ErrorCode::DataError, p.string() + ": no samples");
  bool on_grid = true;
  for (std::size_t i = 1; i < src.size() && on_grid; ++i)
    on_grid = std::abs(src[i].t - src[i - 1].t - dt) <= 0.01 * dt;
  HeadTrace tr{dt, src};
  if (!on_grid) {
    if (warnings) warnings->push_back(p.string() + ": resampled to " + num(dt) + " s grid");
    tr = resample(src, dt);
  }
  tr.validate();
  return tr;
}

inline std::string trace_csv(const HeadTrace& tr) {
  std::string s = "t,pan,tilt,roll\n";
  for (const auto& h : tr.samples) s += num(h.t) + "," + num(h.pan) + "," + num(h.tilt) + "," + num(h.roll) + "\n";
  return s;
}

inline void save_trace(const fs::path& p, const HeadTrace& tr) { write_text(p, trace_csv(tr)); }

// ---- throughput ----------------------------------------------------------------

inline ThroughputTrace load_throughput(const fs::path& p) {
  const auto t = read_csv(p, {"t", "bps"});
  ThroughputTrace tr;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = p.string() + ":" + std::to_string(t.lines[r]);
    tr.t.push_back(parse_number(t.rows[r][0], where, "t"));
    tr.bps.push_back(parse_number(t.rows[r][1], where, "bps", true));
  }
  tr.validate();
  return tr;
}

inline void save_throughput(const fs::path& p, const ThroughputTrace& tr) {
  std::string s = "t,bps\n";
  for (std::size_t i = 0; i < tr.t.size(); ++i) s += num(tr.t[i]) + "," + num(tr.bps[i]) + "\n";
  write_text(p, s);
}

// ---- PGM -----------------------------------------------------------------------

/// Binary PGM (P5), 8 or 16 bit; values are divided by maxval.
inline GrayMap load_pgm(const fs::path& p) {
  const std::string data = read_text(p);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t b = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(b, pos - b);
  };
  require(token() == "P5", ErrorCode::DataError, p.string() + ": not a binary PGM (P5)");
  auto dim = [&](const char* field) {
    const std::string s = token();
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    require(!s.empty() && end == s.c_str() + s.size() && v > 0, ErrorCode::DataError,
            p.string() + ": bad PGM " + field + " '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = dim("width"), h = dim("height"), maxval = dim("maxval");
  require(maxval < 65536, ErrorCode::DataError, p.string() + ": PGM maxval above 65535");
  ++pos;  // single whitespace before the raster
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  require(data.size() >= pos + w * h * bytes, ErrorCode::DataError, p.string() + ": truncated PGM raster");
  GrayMap m(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto* u = reinterpret_cast<const unsigned char*>(data.data() + pos + i * bytes);
    const unsigned v = bytes == 1 ? u[0] : (static_cast<unsigned>(u[0]) << 8) | u[1];
    require(v <= maxval, ErrorCode::DataError, p.string() + ": PGM sample exceeds maxval");
    m.values[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return m;
}

inline void save_pgm(const fs::path& p, const GrayMap& m, unsigned maxval = 255) {
  require(maxval > 0 && maxval < 65536, ErrorCode::InvalidArgument, "PGM maxval must lie in [1, 65535]");
  std::string s = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n" + std::to_string(maxval) + "\n";
  for (double v : m.values) {
    require(std::isfinite(v), ErrorCode::NonFinite, "map value is not finite");
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval < 256) {
      s.push_back(static_cast<char>(q));
    } else {
      s.push_back(static_cast<char>(q >> 8));
      s.push_back(static_cast<char>(q & 0xff));
    }
  }
  write_text(p, s);
}

// ---- raw frames -------------------------------------------------------------------

/// Planar 8-bit luma, row-major; trailing chroma planes are ignored.
inline LumaFrame load_raw_y(const fs::path& p, std::size_t width, std::size_t height) {
  const std::string data = read_text(p);
  require(data.size() >= width * height, ErrorCode::DataError,
          p.string() + ": expected at least " + std::to_string(width * height) + " bytes");
  LumaFrame f(width, height);
  for (std::size_t i = 0; i < width * height; ++i) f.samples[i] = static_cast<unsigned char>(data[i]);
  return f;
}

inline void save_raw_y(const fs::path& p, const LumaFrame& f) {
  require(f.max_value <= 255, ErrorCode::InvalidArgument, "raw frames are 8-bit");
  std::string s(f.samples.size(), '\0');
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<char>(f.samples[i]);
  write_text(p, s);
}

// ---- map timelines ------------------------------------------------------------------

/// Directory with `index.csv` (`t,file` or `t,file,pan,tilt,roll` for
/// head-centered maps) and the PGM files it names.
inline CueTimeline load_map_timeline(const fs::path& dir) {
  const fs::path idx = dir / "index.csv";
  const std::string head = read_text(idx);
  const bool centered = head.substr(0, head.find('\n')).find("pan") != std::string::npos;
  const auto t = centered ? read_csv(idx, {"t", "file", "pan", "tilt", "roll"}) : read_csv(idx, {"t", "file"});
  std::vector<double> times;
  std::vector<GrayMap> maps;
  std::vector<HeadState> heads;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = idx.string() + ":" + std::to_string(t.lines[r]);
    times.push_back(parse_number(t.rows[r][0], where, "t"));
    maps.push_back(load_pgm(dir / t.rows[r][1]));
    if (centered)
      heads.push_back(HeadState{times.back(), parse_number(t.rows[r][2], where, "pan"),
                                parse_number(t.rows[r][3], where, "tilt"), parse_number(t.rows[r][4], where, "roll")});
  }
  require(!times.empty(), ErrorCode::DataError, idx.string() + ": no maps listed");
  return CueTimeline(std::move(times), std::move(maps), std::move(heads));
}

inline void save_map_timeline(const fs::path& dir, std::span<const double> times, std::span<const GrayMap> maps,
                              std::span<const HeadState> heads = {}) {
  require(times.size() == maps.size() && (heads.empty() || heads.size() == maps.size()), ErrorCode::InvalidArgument,
          "one time (and head state) per map required");
  std::string s = heads.empty() ? "t,file\n" : "t,file,pan,tilt,roll\n";
  for (std::size_t i = 0; i < maps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "map_%05zu.pgm", i);
    save_pgm(dir / name, maps[i]);
    s += num(times[i]) + "," + name;
    if (!heads.empty()) s += "," + num(heads[i].pan) + "," + num(heads[i].tilt) + "," + num(heads[i].roll);
    s += "\n";
  }
  write_text(dir / "index.csv", s);
}

// ---- manifest ----------------------------------------------------------------------

inline double json_number(const json& j, const std::string& key, const std::string& where) {
  require(j.contains(key), ErrorCode::DataError, where + ": missing '" + key + "'");
  require(j[key].is_number(), ErrorCode::DataError, where + ": '" + key + "' must be a number");
  const double v = j[key].get<double>();
  require(std::isfinite(v), ErrorCode::NonFinite, where + ": '" + key + "' is not finite");
  return v;
}

inline std::size_t json_count(const json& j, const std::string& key, const std::string& where) {
  const double v = json_number(j, key, where);
  require(v >= 1.0 && v == std::floor(v), ErrorCode::DataError, where + ": '" + key + "' must be a positive integer");
  return static_cast<std::size_t>(v);
}

inline json parse_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::DataError, p.string() + ": " + e.what());
  }
}

/// Loads a manifest; frame paths are resolved against its directory.
inline Manifest load_manifest(const fs::path& p) {
  const json j = parse_json(p);
  const std::string w = p.string();
  require(j.value("format", "") == "orbit-manifest", ErrorCode::DataError, w + ": not an orbit manifest");
  Manifest m;
  m.video_id = j.value("video_id", "video");
  require(j.contains("plane") && j.contains("grid"), ErrorCode::DataError, w + ": missing plane or grid");
  try {
    m.grid = TileGrid(json_count(j["grid"], "rows", w + " grid"), json_count(j["grid"], "cols", w + " grid"),
                      ErpPlane(json_count(j["plane"], "width", w + " plane"), json_count(j["plane"], "height", w + " plane")));
  } catch (const Error& e) {
    fail(ErrorCode::DataError, w + ": " + e.what());
  }
  m.segment_duration = j.contains("segment_duration") ? json_number(j, "segment_duration", w) : 1.0;
  require(j.contains("segments") && j["segments"].is_array(), ErrorCode::DataError, w + ": missing segments array");
  const fs::path base = p.parent_path();
  bool any_frames = false;
  for (std::size_t k = 0; k < j["segments"].size(); ++k) {
    const json& s = j["segments"][k];
    const std::string where = w + " segment " + std::to_string(k);
    require(s.contains("tiles") && s["tiles"].is_array(), ErrorCode::DataError, where + ": missing tiles");
    std::vector<std::vector<Representation>> tiles;
    for (std::size_t n = 0; n < s["tiles"].size(); ++n) {
      std::vector<Representation> ladder;
      for (const json& r : s["tiles"][n]) {
        const std::string rw = where + " tile " + std::to_string(n);
        Representation rep;
        rep.qp = static_cast<int>(json_number(r, "qp", rw));
        rep.rate = json_number(r, "rate", rw);
        rep.distortion = json_number(r, "distortion", rw);
        ladder.push_back(rep);
      }
      tiles.push_back(std::move(ladder));
    }
    m.segments.push_back(std::move(tiles));
    if (s.contains("frames")) {
      any_frames = true;
      const json& f = s["frames"];
      SegmentFrames sf;
      sf.original = load_raw_y(base / f.at("original").get<std::string>(), m.grid.plane().width, m.grid.plane().height);
      for (const auto& [qp, file] : f.at("reconstructed").items())
        sf.reconstructed.emplace(std::stoi(qp),
                                 load_raw_y(base / file.get<std::string>(), m.grid.plane().width, m.grid.plane().height));
      m.frames.push_back(std::move(sf));
    } else {
      require(!any_frames, ErrorCode::DataError, where + ": frames missing while earlier segments have them");
    }
  }
  m.validate();
  return m;
}

/// Writes a manifest; frames, if present, go to `frames/` beside it.
inline void save_manifest(const fs::path& p, const Manifest& m) {
  json j;
  j["format"] = "orbit-manifest";
  j["version"] = 1;
  j["video_id"] = m.video_id;
  j["plane"] = {{"width", m.grid.plane().width}, {"height", m.grid.plane().height}};
  j["grid"] = {{"rows", m.grid.rows()}, {"cols", m.grid.cols()}};
  j["segment_duration"] = m.segment_duration;
  j["segments"] = json::array();
  for (std::size_t k = 0; k < m.segments.size(); ++k) {
    json s;
    s["tiles"] = json::array();
    for (const auto& ladder : m.segments[k]) {
      json l = json::array();
      for (const auto& r : ladder) l.push_back({{"qp", r.qp}, {"rate", r.rate}, {"distortion", r.distortion}});
      s["tiles"].push_back(l);
    }
    if (!m.frames.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "frames/seg%04zu_orig.y", k);
      save_raw_y(p.parent_path() / name, m.frames[k].original);
      s["frames"]["original"] = name;
      for (const auto& [qp, f] : m.frames[k].reconstructed) {
        std::snprintf(name, sizeof name, "frames/seg%04zu_qp%d.y", k, qp);
        save_raw_y(p.parent_path() / name, f);
        s["frames"]["reconstructed"][std::to_string(qp)] = name;
      }
    }
    j["segments"].push_back(s);
  }
  write_text(p, j.dump(1) + "\n");
}

// ---- model checkpoints --------------------------------------------------------------

inline json network_json(const nn::Network& n) {
  json j;
  const auto& s = n.input_shape();
  j["input"] = {s.c, s.h, s.w};
  j["spec"] = n.spec();
  j["layers"] = json::array();
  for (const auto& l : n.layers()) j["layers"].push_back({{"frozen", l->frozen}, {"params", l->params}});
  return j;
}

inline nn::Network network_from_json(const json& j, const std::string& where) {
  require(j.contains("input") && j["input"].is_array() && j["input"].size() == 3 && j.contains("spec") &&
              j.contains("layers"),
          ErrorCode::DataError, where + ": malformed network");
  const nn::Shape in{j["input"][0].get<std::size_t>(), j["input"][1].get<std::size_t>(), j["input"][2].get<std::size_t>()};
  nn::Network n(in, j["spec"].get<std::string>(), 0);
  require(j["layers"].size() == n.layers().size(), ErrorCode::DataError, where + ": layer count does not match spec");
  for (std::size_t i = 0; i < n.layers().size(); ++i) {
    auto& l = *n.layers()[i];
    auto p = j["layers"][i].at("params").get<std::vector<double>>();
    require(p.size() == l.params.size(), ErrorCode::DataError,
            where + ": layer " + std::to_string(i) + " has " + std::to_string(p.size()) + " parameters, expected " +
                std::to_string(l.params.size()));
    for (double v : p) require(std::isfinite(v), ErrorCode::NonFinite, where + ": non-finite parameter");
    l.params = std::move(p);
    l.frozen = j["layers"][i].value("frozen", false);
  }
  return n;
}

inline json model_json(const PredictorModel& m) {
  json j;
  j["format"] = "orbit-fusion";
  j["version"] = 1;
  j["seed"] = m.net.seed;
  j["steps"] = m.net.steps();
  j["epochs_run"] = m.net.epochs_run;
  j["best_val_loss"] = std::isfinite(m.net.best_val_loss) ? json(m.net.best_val_loss) : json(nullptr);
  const auto& L = m.layout;
  std::vector<std::string> cues;
  for (auto c : L.cues) cues.push_back(to_string(c));
  j["layout"] = {{"history_steps", L.history_steps}, {"cue_steps", L.cue_steps}, {"horizon_steps", L.horizon_steps},
                 {"hold_roll", L.hold_roll},         {"cues", cues},             {"min_output_scale", L.min_output_scale}};
  j["branches"] = json::array();
  for (const auto& b : m.net.branches()) j["branches"].push_back({{"name", b.name}, {"core", network_json(b.core)}});
  j["trunk"] = network_json(m.net.trunk());
  return j;
}

inline CueSource parse_cue(const std::string& s) {
  for (CueSource c : {CueSource::SaliencyMax, CueSource::SaliencyCentroid, CueSource::MotionMax})
    if (s == to_string(c)) return c;
  fail(ErrorCode::DataError, "unknown cue source '" + s + "'");
}

inline PredictorModel model_from_json(const json& j, const std::string& where) {
  require(j.value("format", "") == "orbit-fusion", ErrorCode::DataError, where + ": not an orbit fusion checkpoint");
  require(j.value("version", 0) == 1, ErrorCode::DataError, where + ": unsupported checkpoint version");
  PredictorLayout L;
  const json& lj = j.at("layout");
  L.history_steps = lj.at("history_steps").get<std::size_t>();
  L.cue_steps = lj.at("cue_steps").get<std::size_t>();
  L.horizon_steps = lj.at("horizon_steps").get<std::size_t>();
  L.hold_roll = lj.at("hold_roll").get<bool>();
  L.min_output_scale = lj.value("min_output_scale", 0.0);
  for (const auto& c : lj.at("cues")) L.cues.push_back(parse_cue(c.get<std::string>()));
  std::vector<nn::FusionModel::Branch> branches;
  for (const auto& b : j.at("branches"))
    branches.push_back({b.at("name").get<std::string>(), network_from_json(b.at("core"), where)});
  require(branches.size() == 1 + L.cues.size(), ErrorCode::DataError, where + ": branch count does not match layout");
  const json& tj = j.at("trunk");
  nn::FusionModel f(std::move(branches), j.at("steps").get<std::size_t>(), tj.at("spec").get<std::string>(), 0);
  nn::Network trunk = network_from_json(tj, where);
  require(trunk.input_shape() == f.trunk().input_shape(), ErrorCode::DataError, where + ": trunk input shape mismatch");
  f.trunk() = std::move(trunk);
  f.seed = j.value("seed", std::uint64_t{0});
  f.epochs_run = j.value("epochs_run", std::size_t{0});
  f.best_val_loss = j["best_val_loss"].is_number() ? j["best_val_loss"].get<double>() : INFINITY;
  require(f.output_size() == L.output_size(), ErrorCode::DataError, where + ": output size does not match layout");
  return PredictorModel{std::move(f), L};
}

inline void save_model(const fs::path& p, const PredictorModel& m) { write_text(p, model_json(m).dump() + "\n"); }

inline PredictorModel load_model(const fs::path& p) {
  try {
    return model_from_json(parse_json(p), p.string());
  } catch (const json::exception& e) {
    fail(ErrorCode::DataError, p.string() + ": " + e.what());
  }
}

// ---- training configuration -----------------------------------------------------------

/// TrainConfig fields by name; absent keys keep their defaults.
inline nn::TrainConfig load_train_config(const fs::path& p) {
  const json j = parse_json(p);
  nn::TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.folds = j.value("folds", c.folds);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::DataError, p.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

inline FusionSpec load_fusion_spec(const fs::path& p) {
  const json j = parse_json(p);
  FusionSpec s;
  try {
    s.history_core = j.value("history_core", s.history_core);
    s.cue_core = j.value("cue_core", s.cue_core);
    s.trunk = j.value("trunk", s.trunk);
    s.seed = j.value("seed", s.seed);
    auto& L = s.layout;
    L.history_steps = j.value("history_steps", L.history_steps);
    L.cue_steps = j.value("cue_steps", L.cue_steps);
    L.horizon_steps = j.value("horizon_steps", L.horizon_steps);
    L.hold_roll = j.value("hold_roll", L.hold_roll);
    L.min_output_scale = j.value("min_output_scale", L.min_output_scale);
    if (j.contains("cues")) {
      L.cues.clear();
      for (const auto& c : j["cues"]) L.cues.push_back(parse_cue(c.get<std::string>()));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::DataError, p.string() + ": " + e.what());
  }
  require(s.layout.history_steps > 0 && s.layout.cue_steps > 0 && s.layout.horizon_steps > 0, ErrorCode::DataError,
          p.string() + ": window lengths must be positive");
  require(s.layout.cues.empty() || s.layout.cue_steps >= s.layout.history_steps, ErrorCode::DataError,
          p.string() + ": cue window must span at least the history window");
  return s;
}

// ---- recordings ---------------------------------------------------------------------------

/// Training data directory: traces/<name>.csv with optional
/// saliency/<name>/ and motion/<name>/ map timelines.
inline std::vector<Recording> load_recordings(const fs::path& dir, double dt = kDefaultStep, Warnings* warnings = nullptr) {
  const fs::path traces = dir / "traces";
  require(fs::is_directory(traces), ErrorCode::DataError, traces.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(traces))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::DataError, traces.string() + ": no trace files");
  std::vector<Recording> out;
  for (const auto& f : files) {
    Recording r;
    r.trace = load_trace(f, dt, warnings);
    const auto stem = f.stem();
    if (fs::exists(dir / "saliency" / stem / "index.csv"))
      r.scene.saliency = std::make_shared<CueTimeline>(load_map_timeline(dir / "saliency" / stem));
    if (fs::exists(dir / "motion" / stem / "index.csv"))
      r.scene.motion = std::make_shared<CueTimeline>(load_map_timeline(dir / "motion" / stem));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace orbit::io
