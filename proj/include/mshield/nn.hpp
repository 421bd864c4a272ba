#pragma once

// Dense MLP core: batched forward/backward with exact reverse-mode gradients,
// GELU (exact erf form) hidden activations, Adam with a cosine-annealed
// learning rate, and bit-exact binary (de)serialization. 64-bit floats
// throughout; no external ML dependency, Eigen supplies the linear algebra.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

#include "mshield/common.hpp"

namespace mshield {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.3989422804014326779;
}

inline double gelu(double x) { return x * std_normal_cdf(x); }
inline double gelu_grad(double x) { return std_normal_cdf(x) + x * std_normal_pdf(x); }

struct Mlp {
  std::vector<int> widths;       // input, hidden..., output
  std::vector<Matrix> weights;   // weights[l]: widths[l+1] x widths[l]
  std::vector<Vector> biases;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l) {
      n += static_cast<std::size_t>(weights[l].size()) + biases[l].size();
    }
    return n;
  }

  bool all_finite() const {
    for (int l = 0; l < layer_count(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }

  static Mlp make(const std::vector<int>& widths, Rng& rng) {
    Mlp net;
    net.widths = widths;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int fan_in = widths[l], fan_out = widths[l + 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Matrix w(fan_out, fan_in);
      for (int i = 0; i < fan_out; ++i)
        for (int j = 0; j < fan_in; ++j) w(i, j) = rng.uniform(-bound, bound);
      net.weights.push_back(std::move(w));
      net.biases.push_back(Vector::Zero(fan_out));
    }
    return net;
  }
};

struct ForwardCache {
  Matrix input;              // n x in
  std::vector<Matrix> pre;   // pre-activations, n x widths[l+1]
  std::vector<Matrix> act;   // post-activations for hidden layers
};

// Batched forward; rows are samples. GELU on hidden layers, linear output.
inline Matrix forward(const Mlp& net, const Matrix& input, ForwardCache* cache = nullptr) {
  if (input.cols() != net.input_dim()) {
    throw ShapeMismatchError("forward: input has " + std::to_string(input.cols()) +
                             " features, net expects " + std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->input = input;
    cache->pre.clear();
    cache->act.clear();
  }
  Matrix a = input;
  const int L = net.layer_count();
  for (int l = 0; l < L; ++l) {
    Matrix z = a * net.weights[l].transpose();
    z.rowwise() += net.biases[l].transpose();
    if (cache) cache->pre.push_back(z);
    if (l + 1 < L) {
      a = z.unaryExpr([](double x) { return gelu(x); });
      if (cache) cache->act.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

inline Vector forward1(const Mlp& net, const Vector& x, ForwardCache* cache = nullptr) {
  const Matrix y = forward(net, x.transpose(), cache);
  return y.row(0).transpose();
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (int l = 0; l < net.layer_count(); ++l) {
      g.weights.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.push_back(Vector::Zero(net.biases[l].size()));
    }
    return g;
  }

  void scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
  }

  void add(const Gradients& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += other.weights[l];
      biases[l] += other.biases[l];
    }
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }
};

// Exact reverse-mode gradients of sum_n loss_n where d loss / d output is
// `output_grad` (n x out). Optionally also returns d loss / d input.
inline Gradients backward(const Mlp& net, const ForwardCache& cache,
                          const Matrix& output_grad, Matrix* input_grad = nullptr) {
  const int L = net.layer_count();
  if (output_grad.cols() != net.output_dim() || output_grad.rows() != cache.input.rows()) {
    throw ShapeMismatchError("backward: output gradient shape mismatch");
  }
  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);
  Matrix delta = output_grad;  // gradient wrt pre-activation of layer L-1
  for (int l = L - 1; l >= 0; --l) {
    const Matrix& below = l == 0 ? cache.input : cache.act[l - 1];
    g.weights[l] = delta.transpose() * below;
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * net.weights[l];
      delta = back.cwiseProduct(
          cache.pre[l - 1].unaryExpr([](double x) { return gelu_grad(x); }));
    } else if (input_grad) {
      *input_grad = delta * net.weights[l];
    }
  }
  return g;
}

// target <- tau * online + (1 - tau) * target, elementwise.
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (target.widths != online.widths) {
    throw ShapeMismatchError("soft_update: network shapes differ");
  }
  for (int l = 0; l < target.layer_count(); ++l) {
    target.weights[l] = tau * online.weights[l] + (1.0 - tau) * target.weights[l];
    target.biases[l] = tau * online.biases[l] + (1.0 - tau) * target.biases[l];
  }
}

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_base = 1e-4;
  double lr_floor = 1e-5;
  long anneal_steps = 1;  // T of the cosine schedule
};

inline double cosine_lr(const AdamParams& p, long t) {
  const double frac = p.anneal_steps > 0
                          ? clamp(static_cast<double>(t) / p.anneal_steps, 0.0, 1.0)
                          : 1.0;
  return p.lr_floor + 0.5 * (p.lr_base - p.lr_floor) * (1.0 + std::cos(kPi * frac));
}

struct AdamState {
  AdamParams hp;
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;
  long step = 0;

  static AdamState make(const Mlp& net, const AdamParams& hp) {
    AdamState s;
    s.hp = hp;
    for (int l = 0; l < net.layer_count(); ++l) {
      s.m_w.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      s.v_w.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      s.m_b.push_back(Vector::Zero(net.biases[l].size()));
      s.v_b.push_back(Vector::Zero(net.biases[l].size()));
    }
    return s;
  }
};

// One Adam update with bias correction; the cosine schedule is driven by the
// caller's global step.
inline void adam_step(AdamState& state, Mlp& net, const Gradients& grads,
                      long global_step) {
  if (state.m_w.size() != net.weights.size() ||
      grads.weights.size() != net.weights.size()) {
    throw ShapeMismatchError("adam_step: state/gradient layer count mismatch");
  }
  state.step += 1;
  const double lr = cosine_lr(state.hp, global_step);
  const double b1 = state.hp.beta1, b2 = state.hp.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (grads.weights[l].rows() != net.weights[l].rows() ||
        grads.weights[l].cols() != net.weights[l].cols()) {
      throw ShapeMismatchError("adam_step: gradient shape mismatch at layer " +
                               std::to_string(l));
    }
    state.m_w[l] = b1 * state.m_w[l] + (1.0 - b1) * grads.weights[l];
    state.v_w[l] = b2 * state.v_w[l] + (1.0 - b2) * grads.weights[l].cwiseAbs2();
    state.m_b[l] = b1 * state.m_b[l] + (1.0 - b1) * grads.biases[l];
    state.v_b[l] = b2 * state.v_b[l] + (1.0 - b2) * grads.biases[l].cwiseAbs2();
    net.weights[l].noalias() -=
        (lr * (state.m_w[l] / bc1).array() /
         ((state.v_w[l] / bc2).array().sqrt() + state.hp.eps))
            .matrix();
    net.biases[l] -= (lr * (state.m_b[l] / bc1).array() /
                      ((state.v_b[l] / bc2).array().sqrt() + state.hp.eps))
                         .matrix();
  }
}

// --- bit-exact binary serialization ----------------------------------------

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ConfigError("checkpoint: truncated stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_i64(std::ostream& os, std::int64_t v) {
  write_u32(os, static_cast<std::uint32_t>(static_cast<std::uint64_t>(v)));
  write_u32(os, static_cast<std::uint32_t>(static_cast<std::uint64_t>(v) >> 32));
}

inline std::int64_t read_i64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return static_cast<std::int64_t>(lo | (hi << 32));
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_i64(os, static_cast<std::int64_t>(bits));
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = static_cast<std::uint64_t>(read_i64(is));
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_doubles(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_f64(os, p[i]);
}

inline void read_doubles(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = read_f64(is);
}

}  // namespace io

inline void write_mlp(std::ostream& os, const Mlp& net) {
  io::write_u32(os, static_cast<std::uint32_t>(net.widths.size()));
  for (int w : net.widths) io::write_u32(os, static_cast<std::uint32_t>(w));
  for (int l = 0; l < net.layer_count(); ++l) {
    io::write_doubles(os, net.weights[l].data(), net.weights[l].size());
    io::write_doubles(os, net.biases[l].data(), net.biases[l].size());
  }
}

inline Mlp read_mlp(std::istream& is) {
  Mlp net;
  const std::uint32_t n = io::read_u32(is);
  net.widths.resize(n);
  for (auto& w : net.widths) w = static_cast<int>(io::read_u32(is));
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    Matrix w(net.widths[l + 1], net.widths[l]);
    io::read_doubles(is, w.data(), w.size());
    Vector b(net.widths[l + 1]);
    io::read_doubles(is, b.data(), b.size());
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

inline void write_adam(std::ostream& os, const AdamState& s) {
  io::write_f64(os, s.hp.beta1);
  io::write_f64(os, s.hp.beta2);
  io::write_f64(os, s.hp.eps);
  io::write_f64(os, s.hp.lr_base);
  io::write_f64(os, s.hp.lr_floor);
  io::write_i64(os, s.hp.anneal_steps);
  io::write_i64(os, s.step);
  io::write_u32(os, static_cast<std::uint32_t>(s.m_w.size()));
  for (std::size_t l = 0; l < s.m_w.size(); ++l) {
    io::write_u32(os, static_cast<std::uint32_t>(s.m_w[l].rows()));
    io::write_u32(os, static_cast<std::uint32_t>(s.m_w[l].cols()));
    io::write_doubles(os, s.m_w[l].data(), s.m_w[l].size());
    io::write_doubles(os, s.v_w[l].data(), s.v_w[l].size());
    io::write_doubles(os, s.m_b[l].data(), s.m_b[l].size());
    io::write_doubles(os, s.v_b[l].data(), s.v_b[l].size());
  }
}

inline AdamState read_adam(std::istream& is) {
  AdamState s;
  s.hp.beta1 = io::read_f64(is);
  s.hp.beta2 = io::read_f64(is);
  s.hp.eps = io::read_f64(is);
  s.hp.lr_base = io::read_f64(is);
  s.hp.lr_floor = io::read_f64(is);
  s.hp.anneal_steps = io::read_i64(is);
  s.step = io::read_i64(is);
  const std::uint32_t layers = io::read_u32(is);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const int rows = static_cast<int>(io::read_u32(is));
    const int cols = static_cast<int>(io::read_u32(is));
    Matrix mw(rows, cols), vw(rows, cols);
    Vector mb(rows), vb(rows);
    io::read_doubles(is, mw.data(), mw.size());
    io::read_doubles(is, vw.data(), vw.size());
    io::read_doubles(is, mb.data(), mb.size());
    io::read_doubles(is, vb.data(), vb.size());
    s.m_w.push_back(std::move(mw));
    s.v_w.push_back(std::move(vw));
    s.m_b.push_back(std::move(mb));
    s.v_b.push_back(std::move(vb));
  }
  return s;
}

}  // namespace mshield
