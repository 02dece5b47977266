#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "metaprompt/tape.hpp"

namespace mpt {

// Named trainable tensors. std::map keeps iteration in name order, which
// makes checksums, serialization and optimizer sweeps deterministic.
using ParamMap = std::map<std::string, Mat>;

inline std::size_t param_count(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [name, m] : params) n += static_cast<std::size_t>(m.size());
  return n;
}

// FNV-1a over the raw double bits of every tensor, in name order.
inline std::uint64_t params_checksum(const ParamMap& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, m] : params) {
    mix(name.data(), name.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double d = m(i);
      mix(&d, sizeof(d));
    }
  }
  return h;
}

// Binds parameter tensors into a tape as leaf nodes, once per name per pass.
// After backward(), the accumulated gradient of every bound parameter can be
// read back through the same handle.
class GraphCtx {
 public:
  GraphCtx(Tape& tape, ParamMap& params) : tape_(tape), params_(params) {}

  Tape& tape() { return tape_; }
  ParamMap& params() { return params_; }
  bool grad_enabled() const { return tape_.grad_enabled(); }

  Var P(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto pit = params_.find(name);
    if (pit == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    Var v = tape_.leaf(pit->second);
    bound_.emplace(name, v);
    return v;
  }

  bool has_param(const std::string& name) const { return params_.count(name) > 0; }

  // Parameters actually referenced by the graph built so far.
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  ParamMap& params_;
  std::map<std::string, Var> bound_;
};

// Adam with per-parameter step counters; parameters that did not take part
// in a step keep their moments untouched.
class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Config cfg) : cfg_(cfg) {}

  const Config& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // Applies one update for every bound parameter passing the trainable
  // predicate. Gradients are read from the tape handles.
  void step(ParamMap& params, const std::map<std::string, Var>& bound,
            const std::function<bool(const std::string&)>& trainable) {
    for (const auto& [name, var] : bound) {
      if (trainable && !trainable(name)) continue;
      const Mat& g = var.grad();
      State& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Mat::Zero(g.rows(), g.cols());
        st.v = Mat::Zero(g.rows(), g.cols());
      }
      st.t += 1;
      st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
      st.v = cfg_.beta2 * st.v.array().matrix() + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, st.t);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, st.t);
      Mat mhat = st.m / bc1;
      Mat vhat = st.v / bc2;
      params[name].array() -=
          cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps));
    }
  }

  struct State {
    Mat m, v;
    long t = 0;
  };
  const std::map<std::string, State>& state() const { return state_; }
  std::map<std::string, State>& state() { return state_; }

 private:
  Config cfg_;
  std::map<std::string, State> state_;
};

}  // namespace mpt
