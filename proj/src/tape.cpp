// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "fastfwd/errors.hpp"
#include "fastfwd/kernels.hpp"

namespace fastfwd {

namespace {

using kernels::GemmDims;
using kernels::Op;

void require_matrix(const Tensor& t, std::string_view op) {
  if (!t.is_matrix()) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// Accepts [n] or [1 x n] as a row vector of length n.
void require_row_vector(const Tensor& t, std::size_t n, std::string_view op) {
  const bool ok = (t.rank() == 1 && t.shape()[0] == n) || (t.rank() == 2 && t.shape()[0] == 1 && t.shape()[1] == n);
  if (!ok) {
    throw DimensionError(std::string(op) + ": expected a row vector of length " + std::to_string(n) + ", got " +
                         to_string(t.shape()));
  }
}

void axpy(std::span<double> dst, std::span<const double> src, double factor = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += factor * src[i];
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tape::Tape(bool record_gradients) : record_(record_gradients) {}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }

std::span<double> Tape::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad.assign(n.value().size(), 0.0);
  }
  return n.grad;
}

Var Tape::leaf(Tensor& parameter) {
  Node n;
  n.ref = &parameter;
  n.needs_grad = record_ && parameter.requires_grad();
  n.grad_target = n.needs_grad ? &parameter : nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(const Tensor& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(std::string_view op, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward,
               std::uint64_t flops) {
  value.check_finite(std::string(op) + " output");
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_ && std::any_of(inputs.begin(), inputs.end(),
                                        [this](std::uint32_t id) { return nodes_[id].needs_grad; });
  if (n.needs_grad) {
    n.backward = std::move(backward);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  ++op_count_;
  forward_flops_ += flops;
  if (hook_) {
    hook_(op, flops);
  }
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows()) {
    throw DimensionError("matmul: cannot multiply " + to_string(av.shape()) + " by " + to_string(bv.shape()));
  }
  const GemmDims d{av.rows(), av.cols(), bv.cols()};
  Tensor out(Shape{d.m, d.n});
  kernels::gemm(av.data(), Op::none, bv.data(), Op::none, out.data(), d);
  return push("matmul", std::move(out), {a.id, b.id},
              [d](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ia = t.nodes_[self].inputs[0];
                const auto ib = t.nodes_[self].inputs[1];
                std::uint64_t cost = 0;
                std::vector<double> tmp;
                if (t.nodes_[ia].needs_grad) {
                  tmp.assign(d.m * d.k, 0.0);
                  kernels::gemm(t.grad_out(self), Op::none, t.nodes_[ib].value().data(), Op::transpose, tmp,
                                GemmDims{d.m, d.n, d.k});
                  axpy(t.grad_of(ia), tmp);
                  cost += kernels::flops::gemm(d.m, d.k, d.n);
                }
                if (t.nodes_[ib].needs_grad) {
                  tmp.assign(d.k * d.n, 0.0);
                  kernels::gemm(t.nodes_[ia].value().data(), Op::transpose, t.grad_out(self), Op::none, tmp,
                                GemmDims{d.k, d.m, d.n});
                  axpy(t.grad_of(ib), tmp);
                  cost += kernels::flops::gemm(d.m, d.k, d.n);
                }
                return cost;
              },
              kernels::flops::gemm(d.m, d.k, d.n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t n = out.size();
  return push("add", std::move(out), {a.id, b.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                for (auto id : t.nodes_[self].inputs) {
                  if (t.nodes_[id].needs_grad) axpy(t.grad_of(id), t.grad_out(self));
                }
                return 2 * n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t n = out.size();
  return push("sub", std::move(out), {a.id, b.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ia = t.nodes_[self].inputs[0];
                const auto ib = t.nodes_[self].inputs[1];
                if (t.nodes_[ia].needs_grad) axpy(t.grad_of(ia), t.grad_out(self));
                if (t.nodes_[ib].needs_grad) axpy(t.grad_of(ib), t.grad_out(self), -1.0);
                return 2 * n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t n = out.size();
  return push("mul", std::move(out), {a.id, b.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ia = t.nodes_[self].inputs[0];
                const auto ib = t.nodes_[self].inputs[1];
                auto g = t.grad_out(self);
                if (t.nodes_[ia].needs_grad) {
                  auto dst = t.grad_of(ia);
                  auto other = t.nodes_[ib].value().data();
                  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * other[i];
                }
                if (t.nodes_[ib].needs_grad) {
                  auto dst = t.grad_of(ib);
                  auto other = t.nodes_[ia].value().data();
                  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * other[i];
                }
                return 4 * n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::scale(Var a, double factor) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const std::size_t n = out.size();
  return push("scale", std::move(out), {a.id},
              [n, factor](Tape& t, std::uint32_t self) -> std::uint64_t {
                axpy(t.grad_of(t.nodes_[self].inputs[0]), t.grad_out(self), factor);
                return 2 * n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  require_matrix(xv, "add_bias");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  const Tensor& bv = value(bias);
  require_row_vector(bv, n, "add_bias");
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  return push("add_bias", std::move(out), {x.id, bias.id},
              [m, n](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ix = t.nodes_[self].inputs[0];
                const auto ib = t.nodes_[self].inputs[1];
                auto g = t.grad_out(self);
                if (t.nodes_[ix].needs_grad) axpy(t.grad_of(ix), g);
                if (t.nodes_[ib].needs_grad) {
                  auto db = t.grad_of(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
                  }
                }
                return 2 * m * n;
              },
              kernels::flops::elementwise(m * n));
}

Var Tape::tanh(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  const std::size_t n = out.size();
  return push("tanh", std::move(out), {x.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                auto dst = t.grad_of(t.nodes_[self].inputs[0]);
                auto g = t.grad_out(self);
                auto y = t.nodes_[self].value().data();
                for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
                return 4 * n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::gelu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = xv[i];
    out[i] = 0.5 * z * (1.0 + std::tanh(kGeluC * (z + kGeluA * z * z * z)));
  }
  const std::size_t n = out.size();
  return push("gelu", std::move(out), {x.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ix = t.nodes_[self].inputs[0];
                auto dst = t.grad_of(ix);
                auto g = t.grad_out(self);
                auto xs = t.nodes_[ix].value().data();
                for (std::size_t i = 0; i < n; ++i) {
                  const double z = xs[i];
                  const double th = std::tanh(kGeluC * (z + kGeluA * z * z * z));
                  const double dth = (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * z * z);
                  dst[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * z * dth);
                }
                return 12 * n;
              },
              kernels::flops::gelu(n));
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  const std::size_t n = xv.size();
  return push("sum", Tensor::scalar(acc), {x.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                auto dst = t.grad_of(t.nodes_[self].inputs[0]);
                const double g = t.grad_out(self)[0];
                for (double& d : dst) d += g;
                return n;
              },
              kernels::flops::elementwise(n));
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tv = value(table);
  require_matrix(tv, "gather_rows");
  const std::size_t rows = tv.rows();
  const std::size_t d = tv.cols();
  if (ids.empty()) throw ContractError("gather_rows: no ids");
  Tensor out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[r]) + " out of range for table " +
                          to_string(tv.shape()));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto shared_ids = std::make_shared<const std::vector<std::size_t>>(std::move(ids));
  return push("gather_rows", std::move(out), {table.id},
              [shared_ids, d](Tape& t, std::uint32_t self) -> std::uint64_t {
                auto dst = t.grad_of(t.nodes_[self].inputs[0]);
                auto g = t.grad_out(self);
                const auto& idx = *shared_ids;
                for (std::size_t r = 0; r < idx.size(); ++r) {
                  for (std::size_t c = 0; c < d; ++c) dst[idx[r] * d + c] += g[r * d + c];
                }
                return idx.size() * d;
              },
              0);
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  require_row_vector(value(gain), n, "layer_norm gain");
  require_row_vector(value(bias), n, "layer_norm bias");
  const auto gv = value(gain).data();
  const auto bv = value(bias).data();

  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = gv[j] * h + bv[j];
    }
  }
  return push("layer_norm", std::move(out), {x.id, gain.id, bias.id},
              [m, n, xhat, inv_std](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ix = t.nodes_[self].inputs[0];
                const auto ig = t.nodes_[self].inputs[1];
                const auto ib = t.nodes_[self].inputs[2];
                auto g = t.grad_out(self);
                const auto& h = *xhat;
                if (t.nodes_[ig].needs_grad) {
                  auto dg = t.grad_of(ig);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * h[i * n + j];
                }
                if (t.nodes_[ib].needs_grad) {
                  auto db = t.grad_of(ib);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
                }
                if (t.nodes_[ix].needs_grad) {
                  auto dx = t.grad_of(ix);
                  auto gain_v = t.nodes_[ig].value().data();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[i * n + j] * gain_v[j];
                      mean_dh += dh;
                      mean_dh_h += dh * h[i * n + j];
                    }
                    mean_dh *= inv_n;
                    mean_dh_h *= inv_n;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[i * n + j] * gain_v[j];
                      dx[i * n + j] += (*inv_std)[i] * (dh - mean_dh - h[i * n + j] * mean_dh_h);
                    }
                  }
                }
                return 12 * m * n;
              },
              kernels::flops::layer_norm(m, n));
}

Var Tape::causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& qv = value(q);
  require_matrix(qv, "causal_attention");
  require_same_shape(qv, value(k), "causal_attention");
  require_same_shape(qv, value(v), "causal_attention");
  if (heads == 0 || qv.cols() % heads != 0 || qv.rows() != batch * seq) {
    throw DimensionError("causal_attention: activations " + to_string(qv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                         std::to_string(heads));
  }
  const kernels::AttentionDims d{batch, seq, heads, qv.cols() / heads};
  auto probs = std::make_shared<std::vector<double>>(d.probs_size());
  Tensor out(qv.shape());
  kernels::attention_forward_parallel(qv.data(), value(k).data(), value(v).data(), out.data(), *probs, d);
  const std::uint64_t cost = kernels::flops::attention(batch, seq, heads, d.head_dim);
  return push("causal_attention", std::move(out), {q.id, k.id, v.id},
              [d, probs, cost](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto& in = t.nodes_[self].inputs;
                std::vector<double> dq(d.activation_size()), dk(d.activation_size()), dv(d.activation_size());
                kernels::attention_backward_parallel(t.grad_out(self), t.nodes_[in[0]].value().data(),
                                                     t.nodes_[in[1]].value().data(),
                                                     t.nodes_[in[2]].value().data(), *probs, dq, dk, dv, d);
                if (t.nodes_[in[0]].needs_grad) axpy(t.grad_of(in[0]), dq);
                if (t.nodes_[in[1]].needs_grad) axpy(t.grad_of(in[1]), dk);
                if (t.nodes_[in[2]].needs_grad) axpy(t.grad_of(in[2]), dv);
                return 2 * cost;
              },
              cost);
}

Var Tape::cross_entropy(Var logits, std::vector<std::size_t> targets, std::vector<double> mask) {
  const Tensor& lv = value(logits);
  require_matrix(lv, "cross_entropy");
  const std::size_t m = lv.rows();
  const std::size_t c = lv.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                         " rows");
  }
  if (mask.empty()) mask.assign(m, 1.0);
  if (mask.size() != m) throw DimensionError("cross_entropy: mask length does not match rows");
  double weight = 0.0;
  for (double w : mask) {
    if (w < 0.0) throw ContractError("cross_entropy: negative mask weight");
    weight += w;
  }
  if (weight <= 0.0) throw ContractError("cross_entropy: mask selects no positions");

  auto probs = std::make_shared<std::vector<double>>(m * c);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= c) throw ContractError("cross_entropy: target class out of range");
    const double* row = lv.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
    if (mask[i] > 0.0) {
      total += mask[i] * (std::log(z) + mx - row[targets[i]]);
    }
  }
  auto shared_targets = std::make_shared<const std::vector<std::size_t>>(std::move(targets));
  auto shared_mask = std::make_shared<const std::vector<double>>(std::move(mask));
  return push("cross_entropy", Tensor::scalar(total / weight), {logits.id},
              [m, c, weight, probs, shared_targets, shared_mask](Tape& t, std::uint32_t self) -> std::uint64_t {
                auto dst = t.grad_of(t.nodes_[self].inputs[0]);
                const double g = t.grad_out(self)[0];
                for (std::size_t i = 0; i < m; ++i) {
                  const double w = (*shared_mask)[i];
                  if (w <= 0.0) continue;
                  const double f = g * w / weight;
                  for (std::size_t j = 0; j < c; ++j) {
                    const double y = j == (*shared_targets)[i] ? 1.0 : 0.0;
                    dst[i * c + j] += f * ((*probs)[i * c + j] - y);
                  }
                }
                return 3 * m * c;
              },
              kernels::flops::cross_entropy(m, c));
}

Var Tape::mse(Var prediction, Var target) {
  const Tensor& pv = value(prediction);
  const Tensor& tv = value(target);
  require_same_shape(pv, tv, "mse");
  const std::size_t n = pv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = pv[i] - tv[i];
    acc += r * r;
  }
  return push("mse", Tensor::scalar(acc / static_cast<double>(n)), {prediction.id, target.id},
              [n](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto ip = t.nodes_[self].inputs[0];
                const auto it = t.nodes_[self].inputs[1];
                const double f = 2.0 * t.grad_out(self)[0] / static_cast<double>(n);
                auto pv = t.nodes_[ip].value().data();
                auto tv = t.nodes_[it].value().data();
                if (t.nodes_[ip].needs_grad) {
                  auto dst = t.grad_of(ip);
                  for (std::size_t i = 0; i < n; ++i) dst[i] += f * (pv[i] - tv[i]);
                }
                if (t.nodes_[it].needs_grad) {
                  auto dst = t.grad_of(it);
                  for (std::size_t i = 0; i < n; ++i) dst[i] -= f * (pv[i] - tv[i]);
                }
                return 3 * n;
              },
              kernels::flops::mse(n));
}

Var Tape::column_normalize_scale(Var v, Var magnitude) {
  const Tensor& vv = value(v);
  require_matrix(vv, "column_normalize_scale");
  const std::size_t rows = vv.rows();
  const std::size_t cols = vv.cols();
  const Tensor& mv = value(magnitude);
  require_row_vector(mv, cols, "column_normalize_scale magnitude");

  auto norms = std::make_shared<std::vector<double>>(cols);
  kernels::column_norms(vv.data(), rows, cols, *norms);
  std::vector<double> factor(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    if (!((*norms)[j] > 0.0)) {
      throw NumericError("column_normalize_scale: column " + std::to_string(j) + " has zero norm");
    }
    factor[j] = mv[j] / (*norms)[j];
  }
  Tensor out(vv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = factor[j] * vv[i * cols + j];
  }
  return push("column_normalize_scale", std::move(out), {v.id, magnitude.id},
              [rows, cols, norms](Tape& t, std::uint32_t self) -> std::uint64_t {
                const auto iv = t.nodes_[self].inputs[0];
                const auto im = t.nodes_[self].inputs[1];
                auto g = t.grad_out(self);
                auto vd = t.nodes_[iv].value().data();
                auto md = t.nodes_[im].value().data();
                std::vector<double> s(cols, 0.0);
                for (std::size_t i = 0; i < rows; ++i)
                  for (std::size_t j = 0; j < cols; ++j) s[j] += g[i * cols + j] * vd[i * cols + j];
                if (t.nodes_[im].needs_grad) {
                  auto dm = t.grad_of(im);
                  for (std::size_t j = 0; j < cols; ++j) dm[j] += s[j] / (*norms)[j];
                }
                if (t.nodes_[iv].needs_grad) {
                  auto dv = t.grad_of(iv);
                  for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                      const double n = (*norms)[j];
                      dv[i * cols + j] += (md[j] / n) * (g[i * cols + j] - vd[i * cols + j] * s[j] / (n * n));
                    }
                  }
                }
                return 6 * rows * cols;
              },
              kernels::flops::column_normalize_scale(rows, cols));
}

void Tape::backward(Var loss) {
  if (!record_) throw ContractError("backward on a tape that does not record gradients");
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  const Tensor& lv = value(loss);
  if (!lv.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
  }
  for (Node& n : nodes_) {
    if (n.grad_target) n.grad_target->zero_grad();
  }
  backward_flops_ = 0;
  if (nodes_[loss.id].needs_grad) {
    grad_of(loss.id)[0] = 1.0;
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) backward_flops_ += n.backward(*this, static_cast<std::uint32_t>(i));
      if (n.grad_target) axpy(n.grad_target->mutable_grad(), n.grad);
    }
  }
  for (Node& n : nodes_) {
    if (!n.grad_target) continue;
    for (double g : n.grad_target->grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient during backward");
    }
  }
  nodes_.clear();
  op_count_ = 0;
}

}  // namespace fastfwd
