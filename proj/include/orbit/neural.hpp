#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "orbit/common.hpp"

namespace orbit::nn {

/// Channels x rows x cols. Sequences are (1, time, features).
struct Shape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}

  double& at(std::size_t c, std::size_t h, std::size_t w) { return v[(c * shape.h + h) * shape.w + w]; }
  double at(std::size_t c, std::size_t h, std::size_t w) const { return v[(c * shape.h + h) * shape.w + w]; }
};

struct Cache {
  virtual ~Cache() = default;
};

/// A differentiable layer with a flat parameter vector. Gradients are
/// accumulated into `grads` by backward().
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string spec() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  /// Allocates and randomly initializes parameters for input shape `in`.
  virtual void initialize(const Shape& in, Rng& rng) = 0;
  /// `cache` may be null for inference.
  virtual Tensor forward(const Tensor& x, std::unique_ptr<Cache>* cache) const = 0;
  /// Returns d(loss)/d(input); adds d(loss)/d(params) into grads.
  virtual Tensor backward(const Tensor& dy, const Cache& cache) = 0;
  /// Integer routing decisions (argmax, ReLU gates) of the last forward,
  /// used by gradient checks to detect non-differentiable points.
  virtual void routing(const Cache&, std::vector<int>&) const {}

  std::vector<double> params;
  std::vector<double> grads;
  bool frozen = false;

 protected:
  void allocate(std::size_t n) {
    params.assign(n, 0.0);
    grads.assign(n, 0.0);
  }
  static void glorot(std::span<double> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& x : w) x = rng.uniform(-limit, limit);
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Gated recurrent unit over the time axis, returning the full hidden
/// sequence. z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r*h) + bn), h' = (1 - z) n + z h.
class Gru final : public Layer {
 public:
  explicit Gru(std::size_t units) : units_(units) {
    require(units > 0, ErrorCode::InvalidArgument, "GRU needs at least one cell");
  }

  std::string spec() const override { return "gru:" + std::to_string(units_); }
  std::size_t units() const { return units_; }
  std::size_t input_size() const { return in_; }

  Shape output_shape(const Shape& in) const override { return {1, in.h, units_}; }

  void initialize(const Shape& in, Rng& rng) override {
    in_ = in.c * in.w;
    const std::size_t H = units_;
    allocate(3 * H * in_ + 3 * H * H + 3 * H);
    for (int g = 0; g < 3; ++g) {
      glorot(std::span(params).subspan(w_off(g), H * in_), in_, H, rng);
      glorot(std::span(params).subspan(u_off(g), H * H), H, H, rng);
    }
  }

  // Parameter block offsets: gate g in {0: update z, 1: reset r, 2: candidate n}.
  std::size_t w_off(int g) const { return static_cast<std::size_t>(g) * units_ * in_; }
  std::size_t u_off(int g) const { return 3 * units_ * in_ + static_cast<std::size_t>(g) * units_ * units_; }
  std::size_t b_off(int g) const { return 3 * units_ * in_ + 3 * units_ * units_ + static_cast<std::size_t>(g) * units_; }

  struct GruCache : Cache {
    Shape in;
    std::size_t T = 0;
    std::vector<double> x, h, z, r, n;  // h has T+1 rows
  };

  Tensor forward(const Tensor& x, std::unique_ptr<Cache>* cache) const override {
    check_input(x.shape);
    const std::size_t T = x.shape.h, H = units_, I = in_;
    auto c = std::make_unique<GruCache>();
    c->in = x.shape;
    c->T = T;
    c->x = flatten(x);
    c->h.assign((T + 1) * H, 0.0);
    c->z.assign(T * H, 0.0);
    c->r.assign(T * H, 0.0);
    c->n.assign(T * H, 0.0);
    std::vector<double> rh(H);
    const double* p = params.data();
    for (std::size_t t = 0; t < T; ++t) {
      const double* xt = &c->x[t * I];
      const double* hp = &c->h[t * H];
      for (std::size_t k = 0; k < H; ++k) {
        double az = p[b_off(0) + k], ar = p[b_off(1) + k];
        const double* wz = p + w_off(0) + k * I;
        const double* wr = p + w_off(1) + k * I;
        for (std::size_t i = 0; i < I; ++i) {
          az += wz[i] * xt[i];
          ar += wr[i] * xt[i];
        }
        const double* uz = p + u_off(0) + k * H;
        const double* ur = p + u_off(1) + k * H;
        for (std::size_t j = 0; j < H; ++j) {
          az += uz[j] * hp[j];
          ar += ur[j] * hp[j];
        }
        c->z[t * H + k] = sigmoid(az);
        c->r[t * H + k] = sigmoid(ar);
      }
      for (std::size_t j = 0; j < H; ++j) rh[j] = c->r[t * H + j] * hp[j];
      for (std::size_t k = 0; k < H; ++k) {
        double an = p[b_off(2) + k];
        const double* wn = p + w_off(2) + k * I;
        for (std::size_t i = 0; i < I; ++i) an += wn[i] * xt[i];
        const double* un = p + u_off(2) + k * H;
        for (std::size_t j = 0; j < H; ++j) an += un[j] * rh[j];
        const double nk = std::tanh(an);
        const double zk = c->z[t * H + k];
        c->n[t * H + k] = nk;
        c->h[(t + 1) * H + k] = (1.0 - zk) * nk + zk * hp[k];
      }
    }
    Tensor y({1, T, H});
    std::copy(c->h.begin() + static_cast<std::ptrdiff_t>(H), c->h.end(), y.v.begin());
    if (cache) *cache = std::move(c);
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) override {
    const auto& c = static_cast<const GruCache&>(cache);
    const std::size_t T = c.T, H = units_, I = in_;
    std::vector<double> dx(T * I, 0.0), dh_next(H, 0.0), dh(H), dh_prev(H), daz(H), dar(H), dan(H), drh(H), rh(H);
    const double* p = params.data();
    double* g = grads.data();
    for (std::size_t t = T; t-- > 0;) {
      const double* xt = &c.x[t * I];
      const double* hp = &c.h[t * H];
      for (std::size_t k = 0; k < H; ++k) dh[k] = dy.v[t * H + k] + dh_next[k];
      for (std::size_t k = 0; k < H; ++k) {
        const double z = c.z[t * H + k], n = c.n[t * H + k];
        const double dz = dh[k] * (hp[k] - n);
        const double dn = dh[k] * (1.0 - z);
        dh_prev[k] = dh[k] * z;
        dan[k] = dn * (1.0 - n * n);
        daz[k] = dz * z * (1.0 - z);
        rh[k] = c.r[t * H + k] * hp[k];
      }
      std::fill(drh.begin(), drh.end(), 0.0);
      for (std::size_t k = 0; k < H; ++k) {
        const double* un = p + u_off(2) + k * H;
        double* gun = g + u_off(2) + k * H;
        for (std::size_t j = 0; j < H; ++j) {
          gun[j] += dan[k] * rh[j];
          drh[j] += un[j] * dan[k];
        }
      }
      for (std::size_t j = 0; j < H; ++j) {
        const double r = c.r[t * H + j];
        dar[j] = drh[j] * hp[j] * r * (1.0 - r);
        dh_prev[j] += drh[j] * r;
      }
      const double* gates[3] = {daz.data(), dar.data(), dan.data()};
      for (int gi = 0; gi < 3; ++gi) {
        const double* d = gates[gi];
        for (std::size_t k = 0; k < H; ++k) {
          g[b_off(gi) + k] += d[k];
          const double* w = p + w_off(gi) + k * I;
          double* gw = g + w_off(gi) + k * I;
          for (std::size_t i = 0; i < I; ++i) {
            gw[i] += d[k] * xt[i];
            dx[t * I + i] += w[i] * d[k];
          }
        }
      }
      for (int gi = 0; gi < 2; ++gi) {
        const double* d = gates[gi];
        for (std::size_t k = 0; k < H; ++k) {
          const double* u = p + u_off(gi) + k * H;
          double* gu = g + u_off(gi) + k * H;
          for (std::size_t j = 0; j < H; ++j) {
            gu[j] += d[k] * hp[j];
            dh_prev[j] += u[j] * d[k];
          }
        }
      }
      dh_next = dh_prev;
    }
    return unflatten(dx, c.in);
  }

 private:
  void check_input(const Shape& s) const {
    require(s.c * s.w == in_, ErrorCode::ShapeMismatch,
            "GRU expects " + std::to_string(in_) + " features per step, got " + to_string(s));
  }
  std::vector<double> flatten(const Tensor& x) const {
    const auto& s = x.shape;
    std::vector<double> out(s.h * in_);
    for (std::size_t t = 0; t < s.h; ++t)
      for (std::size_t ch = 0; ch < s.c; ++ch)
        for (std::size_t f = 0; f < s.w; ++f) out[t * in_ + ch * s.w + f] = x.at(ch, t, f);
    return out;
  }
  Tensor unflatten(const std::vector<double>& dx, const Shape& s) const {
    Tensor out(s);
    for (std::size_t t = 0; t < s.h; ++t)
      for (std::size_t ch = 0; ch < s.c; ++ch)
        for (std::size_t f = 0; f < s.w; ++f) out.at(ch, t, f) = dx[t * in_ + ch * s.w + f];
    return out;
  }

  std::size_t units_;
  std::size_t in_ = 0;
};

/// Same-padded, stride-1 2-D convolution over (time x feature) grids.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t kh, std::size_t kw, std::size_t out_channels) : kh_(kh), kw_(kw), out_(out_channels) {
    require(kh > 0 && kw > 0 && out_channels > 0, ErrorCode::InvalidArgument, "bad convolution spec");
  }

  std::string spec() const override {
    return "conv:" + std::to_string(kh_) + "x" + std::to_string(kw_) + ":" + std::to_string(out_);
  }
  Shape output_shape(const Shape& in) const override { return {out_, in.h, in.w}; }

  void initialize(const Shape& in, Rng& rng) override {
    in_ = in.c;
    allocate(out_ * in_ * kh_ * kw_ + out_);
    glorot(std::span(params).first(out_ * in_ * kh_ * kw_), in_ * kh_ * kw_, out_ * kh_ * kw_, rng);
  }

  struct ConvCache : Cache {
    Tensor x;
  };

  Tensor forward(const Tensor& x, std::unique_ptr<Cache>* cache) const override {
    require(x.shape.c == in_, ErrorCode::ShapeMismatch, "convolution input channel mismatch");
    const std::size_t H = x.shape.h, W = x.shape.w;
    const long pt = static_cast<long>((kh_ - 1) / 2), pl = static_cast<long>((kw_ - 1) / 2);
    Tensor y({out_, H, W});
    const double* bias = params.data() + out_ * in_ * kh_ * kw_;
    for (std::size_t o = 0; o < out_; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = bias[o];
          for (std::size_t ch = 0; ch < in_; ++ch) {
            const double* k = params.data() + ((o * in_ + ch) * kh_) * kw_;
            for (std::size_t a = 0; a < kh_; ++a) {
              const long yi = static_cast<long>(i + a) - pt;
              if (yi < 0 || yi >= static_cast<long>(H)) continue;
              for (std::size_t b = 0; b < kw_; ++b) {
                const long xj = static_cast<long>(j + b) - pl;
                if (xj < 0 || xj >= static_cast<long>(W)) continue;
                acc += k[a * kw_ + b] * x.at(ch, static_cast<std::size_t>(yi), static_cast<std::size_t>(xj));
              }
            }
          }
          y.at(o, i, j) = acc;
        }
    if (cache) {
      auto c = std::make_unique<ConvCache>();
      c->x = x;
      *cache = std::move(c);
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) override {
    const auto& x = static_cast<const ConvCache&>(cache).x;
    const std::size_t H = x.shape.h, W = x.shape.w;
    const long pt = static_cast<long>((kh_ - 1) / 2), pl = static_cast<long>((kw_ - 1) / 2);
    Tensor dx(x.shape);
    double* gb = grads.data() + out_ * in_ * kh_ * kw_;
    for (std::size_t o = 0; o < out_; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double d = dy.at(o, i, j);
          gb[o] += d;
          for (std::size_t ch = 0; ch < in_; ++ch) {
            const std::size_t base = ((o * in_ + ch) * kh_) * kw_;
            for (std::size_t a = 0; a < kh_; ++a) {
              const long yi = static_cast<long>(i + a) - pt;
              if (yi < 0 || yi >= static_cast<long>(H)) continue;
              for (std::size_t b = 0; b < kw_; ++b) {
                const long xj = static_cast<long>(j + b) - pl;
                if (xj < 0 || xj >= static_cast<long>(W)) continue;
                const auto yy = static_cast<std::size_t>(yi), xx = static_cast<std::size_t>(xj);
                grads[base + a * kw_ + b] += d * x.at(ch, yy, xx);
                dx.at(ch, yy, xx) += d * params[base + a * kw_ + b];
              }
            }
          }
        }
    return dx;
  }

 private:
  std::size_t kh_, kw_, out_;
  std::size_t in_ = 0;
};

/// Non-overlapping max pooling; ties route to the first element in scan order.
class MaxPool final : public Layer {
 public:
  MaxPool(std::size_t ph, std::size_t pw) : ph_(ph), pw_(pw) {
    require(ph > 0 && pw > 0, ErrorCode::InvalidArgument, "bad pooling window");
  }

  std::string spec() const override { return "pool:" + std::to_string(ph_) + "x" + std::to_string(pw_); }
  Shape output_shape(const Shape& in) const override {
    require(in.h >= ph_ && in.w >= pw_, ErrorCode::ShapeMismatch, "pooling window larger than input");
    return {in.c, in.h / ph_, in.w / pw_};
  }
  void initialize(const Shape&, Rng&) override { allocate(0); }

  struct PoolCache : Cache {
    Shape in;
    std::vector<std::size_t> arg;
  };

  Tensor forward(const Tensor& x, std::unique_ptr<Cache>* cache) const override {
    const Shape os = output_shape(x.shape);
    Tensor y(os);
    auto c = std::make_unique<PoolCache>();
    c->in = x.shape;
    c->arg.resize(os.size());
    for (std::size_t ch = 0; ch < os.c; ++ch)
      for (std::size_t i = 0; i < os.h; ++i)
        for (std::size_t j = 0; j < os.w; ++j) {
          double best = -INFINITY;
          std::size_t arg = 0;
          for (std::size_t a = 0; a < ph_; ++a)
            for (std::size_t b = 0; b < pw_; ++b) {
              const std::size_t idx = (ch * x.shape.h + i * ph_ + a) * x.shape.w + j * pw_ + b;
              if (x.v[idx] > best) {
                best = x.v[idx];
                arg = idx;
              }
            }
          y.at(ch, i, j) = best;
          c->arg[(ch * os.h + i) * os.w + j] = arg;
        }
    if (cache) *cache = std::move(c);
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) override {
    const auto& c = static_cast<const PoolCache&>(cache);
    Tensor dx(c.in);
    for (std::size_t k = 0; k < c.arg.size(); ++k) dx.v[c.arg[k]] += dy.v[k];
    return dx;
  }

  void routing(const Cache& cache, std::vector<int>& out) const override {
    for (auto a : static_cast<const PoolCache&>(cache).arg) out.push_back(static_cast<int>(a));
  }

 private:
  std::size_t ph_, pw_;
};

enum class Activation { Linear, Relu, Tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    default: return "linear";
  }
}

/// Fully connected layer over the flattened input.
class Dense final : public Layer {
 public:
  Dense(std::size_t units, Activation act) : units_(units), act_(act) {
    require(units > 0, ErrorCode::InvalidArgument, "dense layer needs at least one node");
  }

  std::string spec() const override { return "dense:" + std::to_string(units_) + ":" + to_string(act_); }
  Shape output_shape(const Shape&) const override { return {1, 1, units_}; }
  std::size_t units() const { return units_; }

  void initialize(const Shape& in, Rng& rng) override {
    in_ = in.size();
    allocate(units_ * in_ + units_);
    glorot(std::span(params).first(units_ * in_), in_, units_, rng);
  }

  /// Sets all parameters to zero (used for a neutral output head).
  void zero() { std::fill(params.begin(), params.end(), 0.0); }

  struct DenseCache : Cache {
    Shape in;
    std::vector<double> x, pre, out;
  };

  Tensor forward(const Tensor& x, std::unique_ptr<Cache>* cache) const override {
    require(x.v.size() == in_, ErrorCode::ShapeMismatch,
            "dense layer expects " + std::to_string(in_) + " inputs, got " + std::to_string(x.v.size()));
    Tensor y({1, 1, units_});
    std::vector<double> pre(units_);
    const double* b = params.data() + units_ * in_;
    for (std::size_t k = 0; k < units_; ++k) {
      double acc = b[k];
      const double* w = params.data() + k * in_;
      for (std::size_t i = 0; i < in_; ++i) acc += w[i] * x.v[i];
      pre[k] = acc;
      y.v[k] = activate(acc);
    }
    if (cache) {
      auto c = std::make_unique<DenseCache>();
      c->in = x.shape;
      c->x = x.v;
      c->pre = std::move(pre);
      c->out = y.v;
      *cache = std::move(c);
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) override {
    const auto& c = static_cast<const DenseCache&>(cache);
    Tensor dx(c.in);
    double* gb = grads.data() + units_ * in_;
    for (std::size_t k = 0; k < units_; ++k) {
      double d = dy.v[k];
      switch (act_) {
        case Activation::Relu: d = c.pre[k] > 0.0 ? d : 0.0; break;
        case Activation::Tanh: d *= 1.0 - c.out[k] * c.out[k]; break;
        default: break;
      }
      if (d == 0.0) continue;
      gb[k] += d;
      const double* w = params.data() + k * in_;
      double* gw = grads.data() + k * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        gw[i] += d * c.x[i];
        dx.v[i] += d * w[i];
      }
    }
    return dx;
  }

  void routing(const Cache& cache, std::vector<int>& out) const override {
    if (act_ != Activation::Relu) return;
    for (double p : static_cast<const DenseCache&>(cache).pre) out.push_back(p > 0.0 ? 1 : 0);
  }

 private:
  double activate(double v) const {
    switch (act_) {
      case Activation::Relu: return v > 0.0 ? v : 0.0;
      case Activation::Tanh: return std::tanh(v);
      default: return v;
    }
  }

  std::size_t units_;
  Activation act_;
  std::size_t in_ = 0;
};

/// Parses one layer token: gru:N, conv:KHxKW:C, pool:PHxPW, dense:N[:act].
inline std::unique_ptr<Layer> parse_layer(const std::string& token) {
  std::vector<std::string> parts;
  std::stringstream ss(token);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto bad = [&]() -> std::unique_ptr<Layer> {
    fail(ErrorCode::InvalidArgument, "bad layer spec '" + token + "'");
  };
  auto num = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (...) {
      bad();
    }
    if (pos != s.size() || v == 0) bad();
    return v;
  };
  auto pair = [&](const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) bad();
    return std::pair{num(s.substr(0, x)), num(s.substr(x + 1))};
  };
  if (parts.empty()) return bad();
  if (parts[0] == "gru" && parts.size() == 2) return std::make_unique<Gru>(num(parts[1]));
  if (parts[0] == "conv" && (parts.size() == 2 || parts.size() == 3)) {
    const auto [kh, kw] = pair(parts[1]);
    return std::make_unique<Conv2d>(kh, kw, parts.size() == 3 ? num(parts[2]) : 1);
  }
  if (parts[0] == "pool" && parts.size() == 2) {
    const auto [ph, pw] = pair(parts[1]);
    return std::make_unique<MaxPool>(ph, pw);
  }
  if (parts[0] == "dense" && (parts.size() == 2 || parts.size() == 3)) {
    Activation act = Activation::Linear;
    if (parts.size() == 3) {
      if (parts[2] == "relu") act = Activation::Relu;
      else if (parts[2] == "tanh") act = Activation::Tanh;
      else if (parts[2] != "linear") bad();
    }
    return std::make_unique<Dense>(num(parts[1]), act);
  }
  return bad();
}

/// Per-sample record of a forward pass.
struct Tape {
  std::vector<std::unique_ptr<Cache>> caches;
};

/// A chain of layers with a fixed input shape.
class Network {
 public:
  Network() = default;
  Network(Shape input, const std::string& spec, std::uint64_t seed) : input_(input) {
    std::stringstream ss(spec);
    for (std::string tok; std::getline(ss, tok, ',');) {
      if (tok.empty()) continue;
      layers_.push_back(parse_layer(tok));
    }
    require(!layers_.empty(), ErrorCode::InvalidArgument, "empty network spec");
    Rng rng(seed);
    Shape s = input;
    for (auto& l : layers_) {
      l->initialize(s, rng);
      s = l->output_shape(s);
    }
    output_ = s;
  }

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Network clone() const {
    Network n(input_, spec(), 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      n.layers_[i]->params = layers_[i]->params;
      n.layers_[i]->frozen = layers_[i]->frozen;
    }
    return n;
  }

  /// Network made of the first `count` layers (parameters copied).
  Network prefix(std::size_t count) const {
    require(count > 0 && count <= layers_.size(), ErrorCode::InvalidArgument, "bad prefix length");
    std::string s;
    for (std::size_t i = 0; i < count; ++i) s += (i ? "," : "") + layers_[i]->spec();
    Network n(input_, s, 0);
    for (std::size_t i = 0; i < count; ++i) n.layers_[i]->params = layers_[i]->params;
    return n;
  }

  std::string spec() const {
    std::string s;
    for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? "," : "") + layers_[i]->spec();
    return s;
  }

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

  void freeze(bool f = true) {
    for (auto& l : layers_) l->frozen = f;
  }
  bool frozen() const {
    return std::all_of(layers_.begin(), layers_.end(), [](const auto& l) { return l->frozen; });
  }

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const {
    require(x.shape == input_, ErrorCode::ShapeMismatch,
            "network input shape " + to_string(x.shape) + " does not match " + to_string(input_));
    if (tape) tape->caches.clear();
    Tensor cur = x;
    for (const auto& l : layers_) {
      std::unique_ptr<Cache> c;
      cur = l->forward(cur, tape ? &c : nullptr);
      if (tape) tape->caches.push_back(std::move(c));
    }
    return cur;
  }

  /// Backpropagates `dy`; returns d(loss)/d(input).
  Tensor backward(const Tensor& dy, const Tape& tape) {
    Tensor g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, *tape.caches[i]);
    return g;
  }

  void routing(const Tape& tape, std::vector<int>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->routing(*tape.caches[i], out);
  }

  std::vector<Layer*> parameter_layers() {
    std::vector<Layer*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
  }

 private:
  Shape input_;
  Shape output_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// One training example: one input tensor per model branch, target vector.
struct Sample {
  std::vector<Tensor> inputs;
  std::vector<double> target;
};

/// Late-fusion model: per-branch recurrent cores whose last `steps` hidden
/// states are concatenated along the feature axis and fed to a trunk.
class FusionModel {
 public:
  struct Branch {
    std::string name;
    Network core;
  };

  FusionModel() = default;
  FusionModel(std::vector<Branch> branches, std::size_t steps, const std::string& trunk_spec, std::uint64_t seed)
      : branches_(std::move(branches)), steps_(steps) {
    require(!branches_.empty(), ErrorCode::InvalidArgument, "fusion model needs at least one branch");
    std::size_t width = 0;
    for (const auto& b : branches_) {
      const Shape o = b.core.output_shape();
      require(o.c == 1 && o.h >= steps, ErrorCode::ShapeMismatch,
              "branch '" + b.name + "' yields fewer than " + std::to_string(steps) + " steps");
      width += o.w;
    }
    trunk_ = Network({1, steps, width}, trunk_spec, seed);
  }

  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;

  FusionModel clone() const {
    FusionModel m;
    for (const auto& b : branches_) m.branches_.push_back({b.name, b.core.clone()});
    m.steps_ = steps_;
    m.trunk_ = trunk_.clone();
    m.epochs_run = epochs_run;
    m.best_val_loss = best_val_loss;
    m.seed = seed;
    return m;
  }

  std::vector<Branch>& branches() { return branches_; }
  const std::vector<Branch>& branches() const { return branches_; }
  Network& trunk() { return trunk_; }
  const Network& trunk() const { return trunk_; }
  std::size_t steps() const { return steps_; }
  std::size_t output_size() const { return trunk_.output_shape().size(); }

  struct FusionTape {
    std::vector<Tape> branch;
    Tape trunk;
  };

  Tensor forward(const std::vector<Tensor>& inputs, FusionTape* tape = nullptr) const {
    require(inputs.size() == branches_.size(), ErrorCode::ShapeMismatch,
            "expected " + std::to_string(branches_.size()) + " inputs, got " + std::to_string(inputs.size()));
    if (tape) tape->branch.resize(branches_.size());
    Tensor fused({1, steps_, trunk_.input_shape().w});
    std::size_t off = 0;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      const auto& core = branches_[b].core;
      const Tensor y = core.forward(inputs[b], tape ? &tape->branch[b] : nullptr);
      const std::size_t T = y.shape.h, W = y.shape.w;
      for (std::size_t t = 0; t < steps_; ++t)
        for (std::size_t f = 0; f < W; ++f) fused.at(0, t, off + f) = y.at(0, T - steps_ + t, f);
      off += W;
    }
    return trunk_.forward(fused, tape ? &tape->trunk : nullptr);
  }

  void backward(const Tensor& dy, FusionTape& tape) {
    const Tensor dfused = trunk_.backward(dy, tape.trunk);
    std::size_t off = 0;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      auto& core = branches_[b].core;
      const Shape o = core.output_shape();
      if (!core.frozen()) {
        Tensor dyb(o);
        for (std::size_t t = 0; t < steps_; ++t)
          for (std::size_t f = 0; f < o.w; ++f) dyb.at(0, o.h - steps_ + t, f) = dfused.at(0, t, off + f);
        core.backward(dyb, tape.branch[b]);
      }
      off += o.w;
    }
  }

  void routing(const FusionTape& tape, std::vector<int>& out) const {
    for (std::size_t b = 0; b < branches_.size(); ++b) branches_[b].core.routing(tape.branch[b], out);
    trunk_.routing(tape.trunk, out);
  }

  std::vector<Layer*> parameter_layers() {
    std::vector<Layer*> out;
    for (auto& b : branches_)
      for (auto* l : b.core.parameter_layers()) out.push_back(l);
    for (auto* l : trunk_.parameter_layers()) out.push_back(l);
    return out;
  }

  std::size_t epochs_run = 0;
  double best_val_loss = INFINITY;
  std::uint64_t seed = 0;

 private:
  std::vector<Branch> branches_;
  std::size_t steps_ = 0;
  Network trunk_;
};

// Uniform model interface used by the trainer.
inline Tensor run_forward(const Network& n, const Sample& s, Tape* tape) { return n.forward(s.inputs.at(0), tape); }
inline Tensor run_forward(const FusionModel& m, const Sample& s, FusionModel::FusionTape* tape) {
  return m.forward(s.inputs, tape);
}
inline void run_backward(Network& n, const Tensor& dy, Tape& tape) { n.backward(dy, tape); }
inline void run_backward(FusionModel& m, const Tensor& dy, FusionModel::FusionTape& tape) { m.backward(dy, tape); }

template <class Model>
using TapeOf = std::conditional_t<std::is_same_v<Model, FusionModel>, FusionModel::FusionTape, Tape>;

/// Mean absolute error over all outputs.
inline double l1_loss(std::span<const double> y, std::span<const double> target) {
  require(y.size() == target.size(), ErrorCode::ShapeMismatch, "loss target size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - target[i]);
  return acc / static_cast<double>(y.size());
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::size_t batch_size = 2048;
  std::size_t decay_every = 10;
  double decay_factor = 0.9;
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;
  std::size_t folds = 6;
  std::uint64_t seed = 1;

  void validate() const {
    require(learning_rate > 0.0 && batch_size > 0 && decay_every > 0 && decay_factor > 0.0 && max_epochs > 0 &&
                patience > 0 && folds > 0,
            ErrorCode::InvalidArgument, "training configuration values must be positive");
    require(patience < max_epochs, ErrorCode::InvalidArgument, "patience must be smaller than max_epochs");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidArgument,
            "Adam betas must lie in [0, 1)");
  }

  /// Step schedule: lr * factor^floor(epoch / decay_every).
  double learning_rate_at(std::size_t epoch) const {
    return learning_rate * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }
};

/// Adam with bias correction over every non-frozen layer.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(std::span<Layer* const> layers, double lr) {
    if (m_.size() != layers.size()) {
      m_.assign(layers.size(), {});
      v_.assign(layers.size(), {});
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t li = 0; li < layers.size(); ++li) {
      Layer& l = *layers[li];
      if (l.frozen || l.params.empty()) continue;
      auto& m = m_[li];
      auto& v = v_[li];
      if (m.size() != l.params.size()) {
        m.assign(l.params.size(), 0.0);
        v.assign(l.params.size(), 0.0);
      }
      for (std::size_t i = 0; i < l.params.size(); ++i) {
        const double g = l.grads[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        l.params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline void zero_grads(std::span<Layer* const> layers) {
  for (auto* l : layers) std::fill(l->grads.begin(), l->grads.end(), 0.0);
}

/// Mean L1 loss of a model over a dataset.
template <class Model>
double dataset_loss(const Model& model, std::span<const Sample> data) {
  require(!data.empty(), ErrorCode::InvalidArgument, "empty dataset");
  double acc = 0.0;
  for (const auto& s : data) {
    const Tensor y = run_forward(model, s, nullptr);
    acc += l1_loss(y.v, s.target);
  }
  return acc / static_cast<double>(data.size());
}

/// Accumulates mean-L1 gradients over `batch` and applies one Adam update.
/// Returns the batch loss.
template <class Model>
double backward_and_step(Model& model, std::span<const Sample* const> batch, Adam& adam, double lr) {
  require(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
  auto layers = model.parameter_layers();
  zero_grads(layers);
  double loss = 0.0;
  for (const Sample* sp : batch) {
    const Sample& s = *sp;
    TapeOf<Model> tape;
    Tensor y = run_forward(model, s, &tape);
    const double l = l1_loss(y.v, s.target);
    if (!std::isfinite(l)) {
      std::ostringstream msg;
      msg << "non-finite loss " << l << " in batch of " << batch.size();
      for (std::size_t i = 0; i < y.v.size(); ++i)
        if (!std::isfinite(y.v[i])) {
          msg << "; first non-finite output index " << i;
          break;
        }
      fail(ErrorCode::NonFinite, msg.str());
    }
    loss += l;
    const double scale = 1.0 / static_cast<double>(y.v.size() * batch.size());
    Tensor dy(y.shape);
    for (std::size_t i = 0; i < y.v.size(); ++i) dy.v[i] = sign(y.v[i] - s.target[i]) * scale;
    run_backward(model, dy, tape);
  }
  adam.step(layers, lr);
  return loss / static_cast<double>(batch.size());
}

template <class Model>
double backward_and_step(Model& model, std::span<const Sample> batch, Adam& adam, double lr) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return backward_and_step(model, std::span<const Sample* const>(ptrs), adam, lr);
}

struct EpochLog {
  std::size_t epoch;
  double learning_rate;
  double train_loss;
  double val_loss;
};

struct TrainReport {
  double initial_val_loss = INFINITY;
  double best_val_loss = INFINITY;
  std::size_t best_epoch = 0;  // 0 = the untrained model
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  std::vector<EpochLog> history;
};

inline std::vector<std::vector<double>> snapshot(std::span<Layer* const> layers) {
  std::vector<std::vector<double>> out;
  for (auto* l : layers) out.push_back(l->params);
  return out;
}

inline void restore(std::span<Layer* const> layers, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i]->params = snap[i];
}

/// Mini-batch Adam on L1 loss with step learning-rate decay, early stopping
/// on validation loss and restoration of the best checkpoint. The untrained
/// model counts as epoch 0.
template <class Model>
TrainReport train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  require(!train_set.empty(), ErrorCode::InvalidArgument, "empty training split");
  require(!val_set.empty(), ErrorCode::InvalidArgument, "empty validation split");
  auto layers = model.parameter_layers();
  Adam adam(cfg);
  Rng rng(cfg.seed);
  TrainReport rep;
  rep.initial_val_loss = dataset_loss(model, val_set);
  rep.best_val_loss = rep.initial_val_loss;
  auto best = snapshot(layers);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Sample*> batch;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train_set[order[k]]);
      train_loss += backward_and_step(model, std::span<const Sample* const>(batch), adam, lr) *
                    static_cast<double>(end - start);
    }
    train_loss /= static_cast<double>(order.size());
    const double val = dataset_loss(model, val_set);
    require(std::isfinite(val), ErrorCode::NonFinite, "non-finite validation loss at epoch " + std::to_string(epoch + 1));
    rep.history.push_back({epoch + 1, lr, train_loss, val});
    rep.epochs_run = epoch + 1;
    if (val < rep.best_val_loss) {
      rep.best_val_loss = val;
      rep.best_epoch = epoch + 1;
      best = snapshot(layers);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      rep.early_stopped = true;
      break;
    }
  }
  restore(layers, best);
  return rep;
}

/// 60/20/20 train/validation/test split of `n` items for one fold: items
/// are shuffled with a fold-specific seed and cut in order.
struct FoldSplit {
  std::vector<std::size_t> train, val, test;
};

inline FoldSplit split_fold(std::size_t n, std::size_t fold, std::uint64_t seed) {
  require(n >= 3, ErrorCode::InvalidArgument, "empty fold: need at least 3 items to split, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed * 1000003ULL + fold);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
  const std::size_t n_val = n_test;
  FoldSplit s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test),
               idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), idx.end());
  require(!s.train.empty(), ErrorCode::InvalidArgument, "empty fold: no training items");
  return s;
}

}  // namespace orbit::nn
