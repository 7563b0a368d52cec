#pragma once

// Neural conditional density estimator: a feedforward encoder with three
// hidden SiLU layers whose output parameterizes a Gaussian over theta
// (natural scale) or over log theta (lognormal).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rng.hpp"

namespace hai_sbi::density {

enum class HeadKind { scalar_gaussian, diag_gaussian, full_gaussian };
enum class Transform { natural, log };

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::scalar_gaussian: return "scalar-gaussian";
    case HeadKind::diag_gaussian: return "diag-gaussian";
    case HeadKind::full_gaussian: return "full-gaussian";
  }
  return "?";
}
inline HeadKind head_kind_from(const std::string& s) {
  if (s == "scalar-gaussian") return HeadKind::scalar_gaussian;
  if (s == "diag-gaussian") return HeadKind::diag_gaussian;
  if (s == "full-gaussian") return HeadKind::full_gaussian;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}
inline std::string to_string(Transform t) { return t == Transform::log ? "log" : "natural"; }
inline Transform transform_from(const std::string& s) {
  if (s == "log") return Transform::log;
  if (s == "natural") return Transform::natural;
  throw std::invalid_argument("unknown target transform '" + s + "'");
}

struct EncoderConfig {
  int input_dim = 1;
  int hidden_width = 64;
  int n_hidden_layers = 3;
  int theta_dim = 1;
  HeadKind head = HeadKind::diag_gaussian;
  Transform transform = Transform::natural;
  std::string activation = "silu";

  int head_dim() const {
    return head == HeadKind::full_gaussian ? theta_dim + theta_dim * (theta_dim + 1) / 2
                                           : 2 * theta_dim;
  }

  void check() const {
    if (input_dim < 1 || hidden_width < 1 || n_hidden_layers < 1 || theta_dim < 1) {
      throw std::invalid_argument("EncoderConfig: dimensions must be >= 1");
    }
    if (head == HeadKind::scalar_gaussian && theta_dim != 1) {
      throw std::invalid_argument("EncoderConfig: scalar head needs theta_dim = 1");
    }
    if (activation != "silu") {
      throw std::invalid_argument("EncoderConfig: only the silu activation is implemented");
    }
  }
};

// Dense layer, weights row-major (out x in).
struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

struct EncoderWeights {
  std::vector<Layer> layers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      n += l.weight.size() + l.bias.size();
    }
    return n;
  }

  // Visits every parameter in a fixed order (weights then bias, layer by layer).
  template <class F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      for (auto& w : l.weight) f(w);
      for (auto& b : l.bias) f(b);
    }
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& l : layers) {
      for (const auto& w : l.weight) f(w);
      for (const auto& b : l.bias) f(b);
    }
  }

  bool operator==(const EncoderWeights&) const = default;
};

inline EncoderWeights zero_weights(const EncoderConfig& cfg) {
  cfg.check();
  EncoderWeights w;
  int in = cfg.input_dim;
  for (int l = 0; l <= cfg.n_hidden_layers; ++l) {
    const int out = l == cfg.n_hidden_layers ? cfg.head_dim() : cfg.hidden_width;
    w.layers.push_back({in, out, std::vector<double>(static_cast<std::size_t>(in) * out, 0.0),
                        std::vector<double>(out, 0.0)});
    in = out;
  }
  return w;
}

inline EncoderWeights zero_weights_like(const EncoderWeights& w) {
  EncoderWeights out;
  for (const auto& l : w.layers) {
    out.layers.push_back({l.in, l.out, std::vector<double>(l.weight.size(), 0.0),
                          std::vector<double>(l.bias.size(), 0.0)});
  }
  return out;
}

// Fan-in scaled normal weights; the output layer starts near zero so the
// initial head is close to a standard normal.
inline EncoderWeights init_weights(const EncoderConfig& cfg, std::uint64_t seed,
                                   double output_scale = 1e-2) {
  EncoderWeights w = zero_weights(cfg);
  rng::Stream stream(seed, 0x1417);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const bool last = l + 1 == w.layers.size();
    const double sd = (last ? output_scale : 1.0) / std::sqrt(static_cast<double>(layer.in));
    for (auto& v : layer.weight) {
      v = sd * stream.normal();
    }
  }
  return w;
}

inline double silu(double a) { return a / (1.0 + std::exp(-a)); }
inline double silu_grad(double a) {
  const double s = 1.0 / (1.0 + std::exp(-a));
  return s * (1.0 + a * (1.0 - s));
}

// Gaussian over the (possibly log-transformed) parameter. For diagonal
// heads `scale` holds sigma; for full heads it holds the lower-triangular
// Cholesky factor L (d x d, row-major) with Sigma = L L^T.
struct HeadOutput {
  HeadKind kind = HeadKind::diag_gaussian;
  std::vector<double> mean;
  std::vector<double> scale;

  int dim() const { return static_cast<int>(mean.size()); }
  bool full() const { return kind == HeadKind::full_gaussian; }

  double chol(int r, int c) const {
    if (full()) {
      return scale[static_cast<std::size_t>(r) * dim() + c];
    }
    return r == c ? scale[r] : 0.0;
  }

  std::vector<double> covariance() const {
    const int d = dim();
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int k = 0; k <= std::min(r, c); ++k) {
          acc += chol(r, k) * chol(c, k);
        }
        cov[static_cast<std::size_t>(r) * d + c] = acc;
      }
    }
    return cov;
  }

  bool operator==(const HeadOutput&) const = default;
};

inline HeadOutput head_from_raw(std::span<const double> raw, const EncoderConfig& cfg) {
  const int d = cfg.theta_dim;
  HeadOutput h;
  h.kind = cfg.head;
  h.mean.assign(raw.begin(), raw.begin() + d);
  if (cfg.head == HeadKind::full_gaussian) {
    h.scale.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::size_t k = d;
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c <= r; ++c, ++k) {
        h.scale[static_cast<std::size_t>(r) * d + c] = r == c ? std::exp(raw[k]) : raw[k];
      }
    }
  } else {
    h.scale.resize(d);
    for (int j = 0; j < d; ++j) {
      h.scale[j] = std::exp(raw[d + j]);
    }
  }
  return h;
}

// Activations kept for the backward pass.
struct Tape {
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // input of each layer (post[0] = x)
};

inline std::vector<double> forward_raw(const EncoderWeights& w, std::span<const double> x,
                                       Tape* tape = nullptr) {
  std::vector<double> h(x.begin(), x.end());
  if (tape) {
    tape->pre.resize(w.layers.size());
    tape->post.resize(w.layers.size());
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    std::vector<double> a(layer.bias);
    for (int o = 0; o < layer.out; ++o) {
      const double* row = layer.weight.data() + static_cast<std::size_t>(o) * layer.in;
      double acc = 0.0;
      for (int i = 0; i < layer.in; ++i) {
        acc += row[i] * h[i];
      }
      a[o] += acc;
    }
    if (tape) {
      tape->post[l] = h;
      tape->pre[l] = a;
    }
    const bool last = l + 1 == w.layers.size();
    if (!last) {
      for (auto& v : a) {
        v = silu(v);
      }
    }
    h = std::move(a);
  }
  return h;
}

inline HeadOutput forward(const EncoderWeights& w, const EncoderConfig& cfg,
                          std::span<const double> x) {
  if (static_cast<int>(x.size()) != cfg.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " entries, encoder expects " + std::to_string(cfg.input_dim));
  }
  if (w.layers.empty() || w.layers.front().in != cfg.input_dim ||
      w.layers.back().out != cfg.head_dim()) {
    throw std::invalid_argument("forward: weights do not match config");
  }
  const auto raw = forward_raw(w, x);
  return head_from_raw(raw, cfg);
}

inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Maps theta to the Gaussian's coordinate; returns the log-Jacobian term
// added to the negative log-density.
inline double to_gaussian_coords(std::span<const double> theta, Transform t,
                                 std::vector<double>& out) {
  out.assign(theta.begin(), theta.end());
  if (t == Transform::natural) {
    return 0.0;
  }
  double jac = 0.0;
  for (auto& v : out) {
    if (!(v > 0.0)) {
      throw std::domain_error("log-transformed density needs theta > 0");
    }
    jac += std::log(v);
    v = std::log(v);
  }
  return jac;
}

// z = L^{-1}(u - mean), solved by forward substitution.
inline std::vector<double> whiten(const HeadOutput& h, std::span<const double> u) {
  const int d = h.dim();
  std::vector<double> z(d);
  for (int r = 0; r < d; ++r) {
    double acc = u[r] - h.mean[r];
    for (int c = 0; c < r; ++c) {
      acc -= h.chol(r, c) * z[c];
    }
    z[r] = acc / h.chol(r, r);
  }
  return z;
}

inline double nll(const HeadOutput& h, std::span<const double> theta,
                  Transform transform = Transform::natural) {
  if (static_cast<int>(theta.size()) != h.dim()) {
    throw std::invalid_argument("nll: theta dimension mismatch");
  }
  std::vector<double> u;
  const double jac = to_gaussian_coords(theta, transform, u);
  const auto z = whiten(h, u);
  double out = h.dim() * kHalfLog2Pi + jac;
  for (int j = 0; j < h.dim(); ++j) {
    out += std::log(h.chol(j, j)) + 0.5 * z[j] * z[j];
  }
  return out;
}

inline double log_prob(const HeadOutput& h, std::span<const double> theta,
                       Transform transform = Transform::natural) {
  return -nll(h, theta, transform);
}

// d nll / d raw head outputs, given Gaussian coordinates u.
inline std::vector<double> head_gradient(const EncoderConfig& cfg, std::span<const double> raw,
                                         std::span<const double> u, double* loss) {
  const HeadOutput h = head_from_raw(raw, cfg);
  const int d = cfg.theta_dim;
  const auto z = whiten(h, u);
  std::vector<double> g(raw.size(), 0.0);
  if (loss) {
    double l = d * kHalfLog2Pi;
    for (int j = 0; j < d; ++j) {
      l += std::log(h.chol(j, j)) + 0.5 * z[j] * z[j];
    }
    *loss = l;
  }
  if (!h.full()) {
    for (int j = 0; j < d; ++j) {
      g[j] = -z[j] / h.scale[j];
      g[d + j] = 1.0 - z[j] * z[j];
    }
    return g;
  }
  // v = L^{-T} z by back substitution.
  std::vector<double> v(d);
  for (int r = d - 1; r >= 0; --r) {
    double acc = z[r];
    for (int c = r + 1; c < d; ++c) {
      acc -= h.chol(c, r) * v[c];
    }
    v[r] = acc / h.chol(r, r);
  }
  for (int j = 0; j < d; ++j) {
    g[j] = -v[j];
  }
  std::size_t k = d;
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c <= r; ++c, ++k) {
      const double g_l = -v[r] * z[c];
      g[k] = r == c ? (g_l * h.chol(r, r) + 1.0) : g_l;
    }
  }
  return g;
}

struct Example {
  std::span<const double> x;
  std::span<const double> theta;
};

// Accumulates d(loss)/d(weights) for one example into `grad` (same shape as
// `w`), scaled by `weight`; returns the example's loss.
inline double accumulate_gradient(const EncoderWeights& w, const EncoderConfig& cfg,
                                  const Example& ex, double weight, EncoderWeights& grad) {
  Tape tape;
  const auto raw = forward_raw(w, ex.x, &tape);
  std::vector<double> u;
  const double jac = to_gaussian_coords(ex.theta, cfg.transform, u);
  double loss = 0.0;
  std::vector<double> delta = head_gradient(cfg, raw, u, &loss);
  for (std::size_t l = w.layers.size(); l-- > 0;) {
    const auto& layer = w.layers[l];
    auto& g = grad.layers[l];
    const auto& input = tape.post[l];
    for (int o = 0; o < layer.out; ++o) {
      const double dz = delta[o] * weight;
      g.bias[o] += dz;
      double* row = g.weight.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        row[i] += dz * input[i];
      }
    }
    if (l == 0) {
      break;
    }
    std::vector<double> back(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double* row = layer.weight.data() + static_cast<std::size_t>(o) * layer.in;
      const double dz = delta[o];
      for (int i = 0; i < layer.in; ++i) {
        back[i] += row[i] * dz;
      }
    }
    const auto& pre = tape.pre[l - 1];
    for (int i = 0; i < layer.in; ++i) {
      back[i] *= silu_grad(pre[i]);
    }
    delta = std::move(back);
  }
  return loss + jac;
}

struct Gradient {
  EncoderWeights grad;
  double loss = 0.0;  // mean nll over the batch
};

inline Gradient grad(const EncoderWeights& w, const EncoderConfig& cfg,
                     std::span<const Example> batch) {
  if (batch.empty()) {
    throw std::invalid_argument("grad: empty batch");
  }
  Gradient out{zero_weights(cfg), 0.0};
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    out.loss += weight * accumulate_gradient(w, cfg, ex, weight, out.grad);
  }
  return out;
}

// Draws from the head; with truncation, draws with any component <= 0 are
// rejected and redrawn.
inline std::vector<std::vector<double>> sample(const HeadOutput& h, std::size_t n,
                                               Transform transform, bool truncate_at_zero,
                                               std::uint64_t seed) {
  if (n < 1) {
    throw std::invalid_argument("sample: n must be >= 1");
  }
  const int d = h.dim();
  rng::Stream stream(seed, 0x5A3E);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  std::vector<double> z(d);
  std::uint64_t attempts = 0;
  constexpr std::uint64_t kProbe = 2'000'000;
  while (out.size() < n) {
    ++attempts;
    for (auto& v : z) {
      v = stream.normal();
    }
    std::vector<double> draw(d);
    bool positive = true;
    for (int r = 0; r < d; ++r) {
      double acc = h.mean[r];
      for (int c = 0; c <= r; ++c) {
        acc += h.chol(r, c) * z[c];
      }
      draw[r] = transform == Transform::log ? std::exp(acc) : acc;
      positive = positive && draw[r] > 0.0;
    }
    if (truncate_at_zero && !positive) {
      if (attempts >= kProbe && static_cast<double>(out.size()) < 1e-6 * static_cast<double>(attempts)) {
        throw std::runtime_error("sample: truncation at zero accepts fewer than 1e-6 of draws");
      }
      continue;
    }
    out.push_back(std::move(draw));
  }
  return out;
}

// --- persistence ---------------------------------------------------------

inline constexpr int kWeightsFormatVersion = 1;

inline nlohmann::json config_to_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim},       {"hidden_width", c.hidden_width},
          {"n_hidden_layers", c.n_hidden_layers}, {"theta_dim", c.theta_dim},
          {"head", to_string(c.head)},      {"transform", to_string(c.transform)},
          {"activation", c.activation}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.n_hidden_layers = j.at("n_hidden_layers").get<int>();
  c.theta_dim = j.at("theta_dim").get<int>();
  c.head = head_kind_from(j.at("head").get<std::string>());
  c.transform = transform_from(j.at("transform").get<std::string>());
  c.activation = j.value("activation", std::string("silu"));
  c.check();
  return c;
}

inline nlohmann::json weights_to_json(const EncoderConfig& cfg, const EncoderWeights& w) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : w.layers) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"weight", l.weight}, {"bias", l.bias}});
  }
  return {{"format_version", kWeightsFormatVersion},
          {"config", config_to_json(cfg)},
          {"layers", layers}};
}

inline std::pair<EncoderConfig, EncoderWeights> weights_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kWeightsFormatVersion) {
    throw std::runtime_error("weights: unsupported format version");
  }
  const EncoderConfig cfg = config_from_json(j.at("config"));
  EncoderWeights w;
  for (const auto& l : j.at("layers")) {
    Layer layer{l.at("in").get<int>(), l.at("out").get<int>(),
                l.at("weight").get<std::vector<double>>(), l.at("bias").get<std::vector<double>>()};
    if (layer.weight.size() != static_cast<std::size_t>(layer.in) * layer.out ||
        layer.bias.size() != static_cast<std::size_t>(layer.out)) {
      throw std::runtime_error("weights: layer shape mismatch");
    }
    w.layers.push_back(std::move(layer));
  }
  if (w.layers.size() != static_cast<std::size_t>(cfg.n_hidden_layers) + 1 ||
      w.layers.front().in != cfg.input_dim || w.layers.back().out != cfg.head_dim()) {
    throw std::runtime_error("weights: layers do not match config");
  }
  for (const auto& l : w.layers) {
    for (double v : l.weight) {
      if (!std::isfinite(v)) throw std::runtime_error("weights: non-finite value");
    }
  }
  return {cfg, std::move(w)};
}

inline void save_weights(const std::string& path, const EncoderConfig& cfg, const EncoderWeights& w) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << weights_to_json(cfg, w).dump() << '\n';
}

inline std::pair<EncoderConfig, EncoderWeights> load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read '" + path + "'");
  }
  return weights_from_json(nlohmann::json::parse(in));
}

// Rewrites the output layer so a network trained on standardized targets
// (u - shift) / scale reports densities for the unstandardized u.
inline void fold_target_affine(EncoderWeights& w, const EncoderConfig& cfg,
                               std::span<const double> shift, std::span<const double> scale) {
  auto& out = w.layers.back();
  const int d = cfg.theta_dim;
  auto scale_row = [&out](int row, double s, double add) {
    double* r = out.weight.data() + static_cast<std::size_t>(row) * out.in;
    for (int i = 0; i < out.in; ++i) {
      r[i] *= s;
    }
    out.bias[row] = out.bias[row] * s + add;
  };
  for (int j = 0; j < d; ++j) {
    scale_row(j, scale[j], shift[j]);
  }
  if (cfg.head == HeadKind::full_gaussian) {
    int k = d;
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c <= r; ++c, ++k) {
        if (r == c) {
          out.bias[k] += std::log(scale[r]);
        } else {
          scale_row(k, scale[r], 0.0);
        }
      }
    }
  } else {
    for (int j = 0; j < d; ++j) {
      out.bias[d + j] += std::log(scale[j]);
    }
  }
}

}  // namespace hai_sbi::density
