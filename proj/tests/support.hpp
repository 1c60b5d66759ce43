// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Oracles and generators shared by the test binaries. Nothing here calls
// into the autodiff engine: the finite-difference checker only uses forward
// losses, and the reference Adam is a scalar loop.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "fastfwd/adapters.hpp"
#include "fastfwd/model.hpp"

namespace fastfwd::testing {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", x);
  return buf;
}

struct GradCheck {
  double worst = 0.0;              // max over leaves of |ad - fd| / (|fd| + 1e-8), L2 norms over the leaf
  std::string where;               // leaf attaining `worst`
  double worst_elementwise = 0.0;  // same ratio per scalar; informational, rounding-limited
  std::string where_elementwise;
  std::size_t checked = 0;
};

// Central differences with step h on every trainable scalar. The resolution
// of the difference quotient is about ulp(loss) / h, so scalars with
// gradients near 1e-10 cannot be resolved individually; the per-leaf ratio
// is the meaningful one.
inline GradCheck finite_difference_check(Model& model, const Batch& batch, double h = 1e-5) {
  model.loss_and_grad(batch);
  GradCheck out;
  ParameterStore& params = model.parameters();
  for (const auto& name : params.trainable_names()) {
    Tensor& p = params.at(name);
    const std::vector<double> ad(p.grad().begin(), p.grad().end());
    double diff_sq = 0.0, fd_sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double w = p[i];
      p[i] = w + h;
      const double up = model.loss(batch);
      p[i] = w - h;
      const double down = model.loss(batch);
      p[i] = w;
      const double fd = (up - down) / (2.0 * h);
      diff_sq += (ad[i] - fd) * (ad[i] - fd);
      fd_sq += fd * fd;
      const double rel = std::abs(ad[i] - fd) / (std::abs(fd) + 1e-8);
      if (rel > out.worst_elementwise) {
        out.worst_elementwise = rel;
        out.where_elementwise = name + "[" + std::to_string(i) + "] ad=" + fmt(ad[i]) + " fd=" + fmt(fd);
      }
      ++out.checked;
    }
    const double rel = std::sqrt(diff_sq) / (std::sqrt(fd_sq) + 1e-8);
    if (rel >= out.worst) {
      out.worst = rel;
      out.where = name + " |fd|=" + fmt(std::sqrt(fd_sq));
    }
  }
  return out;
}

// Overwrites every parameter (trainable or not) with N(mean, stddev) draws.
inline void randomize_parameters(Model& model, double stddev, std::uint64_t seed, bool trainable_only = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  ParameterStore& params = model.parameters();
  for (const auto& name : params.names()) {
    if (trainable_only && !params.is_trainable(name)) continue;
    for (double& x : params.at(name).data()) x = dist(rng);
  }
}

// Hand-written Adam on a flat vector, used as an independent oracle.
struct ReferenceAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m{}, v{};
  int t = 0;

  std::vector<double> step(std::vector<double> w, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    return w;
  }
};

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), random_vector(rng, n, scale));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fastfwd-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace fastfwd::testing
