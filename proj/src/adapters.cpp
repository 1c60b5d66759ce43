// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/adapters.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fastfwd/errors.hpp"
#include "fastfwd/kernels.hpp"

namespace fastfwd {

std::string_view to_string(AdapterVariant v) { return v == AdapterVariant::lora ? "lora" : "dora"; }

std::string_view to_string(TargetSelector s) {
  switch (s) {
    case TargetSelector::attention:
      return "attention";
    case TargetSelector::all_2d:
      return "all_2d";
    case TargetSelector::explicit_list:
      return "list";
  }
  return "attention";
}

AdapterVariant parse_adapter_variant(std::string_view text) {
  if (text == "lora") return AdapterVariant::lora;
  if (text == "dora") return AdapterVariant::dora;
  throw ConfigError("variant", "expected 'lora' or 'dora', got '" + std::string(text) + "'");
}

TargetSelector parse_target_selector(std::string_view text) {
  if (text == "attention") return TargetSelector::attention;
  if (text == "all_2d") return TargetSelector::all_2d;
  if (text == "list") return TargetSelector::explicit_list;
  throw ConfigError("adapter.targets", "expected 'attention', 'all_2d' or 'list', got '" + std::string(text) + "'");
}

std::vector<std::string> select_targets(const Model& model, const AdapterSpec& spec) {
  const ParameterStore& params = model.parameters();
  std::vector<std::string> out;
  switch (spec.selector) {
    case TargetSelector::attention:
      for (const auto& name : params.names()) {
        if (model.architecture().is_attention_matrix(name)) out.push_back(name);
      }
      break;
    case TargetSelector::all_2d:
      for (const auto& name : params.names()) {
        if (params.at(name).is_matrix()) out.push_back(name);
      }
      break;
    case TargetSelector::explicit_list:
      for (const auto& name : spec.targets) {
        if (!params.contains(name)) throw ContractError("adapter target '" + name + "' is not a parameter");
        if (!params.at(name).is_matrix()) {
          throw ContractError("adapter target '" + name + "' is not a matrix: " + to_string(params.at(name).shape()));
        }
        out.push_back(name);
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      break;
  }
  if (out.empty()) {
    throw ConfigError("adapter.targets", "adapter selector '" + std::string(to_string(spec.selector)) +
                                     "' matches no parameter of model '" +
                                     std::string(model.architecture().name()) + "'");
  }
  return out;
}

Model attach(Model model, const AdapterSpec& spec, std::uint64_t seed) {
  if (spec.rank < 1) throw ConfigError("adapter.rank", "adapter rank must be at least 1");
  const auto targets = select_targets(model, spec);
  ParameterStore& params = model.parameters();
  params.freeze_all();
  Rng rng(seed);
  for (const auto& name : targets) {
    const Tensor& base = params.at(name);
    const std::size_t d = base.rows();
    const std::size_t k = base.cols();
    if (spec.rank > std::min(d, k)) {
      throw ContractError("adapter rank " + std::to_string(spec.rank) + " exceeds min dimension of '" + name +
                          "' " + to_string(base.shape()));
    }
    AdapterSite site;
    site.base = name;
    site.variant = spec.variant;
    site.rank = spec.rank;
    site.scale = spec.scale();
    site.b_name = name + ".lora_B";
    site.a_name = name + ".lora_A";
    Tensor magnitude;
    if (spec.variant == AdapterVariant::dora) {
      site.m_name = name + ".dora_m";
      magnitude = Tensor(Shape{k});
      kernels::column_norms(base.data(), d, k, magnitude.data());
    }
    params.add(site.b_name, Tensor(Shape{d, spec.rank}), true);
    params.add(site.a_name, Tensor::randn(Shape{spec.rank, k}, spec.init_std, rng), true);
    if (spec.variant == AdapterVariant::dora) params.add(site.m_name, std::move(magnitude), true);
    model.add_adapter(std::move(site));
  }
  return model;
}

Var compose_effective_weight(Tape& tape, const AdapterSite& site, Var base, Var b, Var a, Var magnitude) {
  Var delta = tape.matmul(b, a);
  if (site.scale != 1.0) delta = tape.scale(delta, site.scale);
  const Var v = tape.add(base, delta);
  if (site.variant == AdapterVariant::lora) return v;
  return tape.column_normalize_scale(v, magnitude);
}

std::uint64_t composition_flops(const ParameterStore& params, const AdapterSite& site) {
  const Tensor& base = params.at(site.base);
  const std::size_t d = base.rows();
  const std::size_t k = base.cols();
  std::uint64_t cost = kernels::flops::gemm(d, site.rank, k) + kernels::flops::elementwise(d * k);
  if (site.scale != 1.0) cost += kernels::flops::elementwise(d * k);
  if (site.variant == AdapterVariant::dora) cost += kernels::flops::column_normalize_scale(d, k);
  return cost;
}

Tensor effective_weight(const Model& model, const std::string& base_name) {
  const auto it = model.adapters().find(base_name);
  if (it == model.adapters().end()) throw ContractError("'" + base_name + "' is not an adapter site");
  const AdapterSite& site = it->second;
  const ParameterStore& params = model.parameters();
  Tape tape(false);
  const Var m = site.variant == AdapterVariant::dora ? tape.leaf(params.at(site.m_name)) : Var{};
  const Var w = compose_effective_weight(tape, site, tape.leaf(params.at(site.base)), tape.leaf(params.at(site.b_name)),
                                         tape.leaf(params.at(site.a_name)), m);
  return tape.value(w);
}

std::size_t trainable_size(const Model& model) { return model.parameters().trainable_scalar_count(); }

std::vector<double> snapshot_trainable(const Model& model) {
  std::vector<double> flat;
  flat.reserve(trainable_size(model));
  const ParameterStore& params = model.parameters();
  for (const auto& name : params.trainable_names()) {
    auto d = params.at(name).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  return flat;
}

void restore_trainable(Model& model, std::span<const double> flat) {
  const std::size_t expected = trainable_size(model);
  if (flat.size() != expected) {
    throw ContractError("restore_trainable: got " + std::to_string(flat.size()) + " values, model has " +
                        std::to_string(expected) + " trainable scalars");
  }
  ParameterStore& params = model.parameters();
  std::size_t offset = 0;
  for (const auto& name : params.trainable_names()) {
    auto d = params.at(name).data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
}

std::vector<double> snapshot_gradients(const Model& model) {
  std::vector<double> flat;
  flat.reserve(trainable_size(model));
  const ParameterStore& params = model.parameters();
  for (const auto& name : params.trainable_names()) {
    const Tensor& t = params.at(name);
    if (t.has_grad()) {
      flat.insert(flat.end(), t.grad().begin(), t.grad().end());
    } else {
      flat.insert(flat.end(), t.size(), 0.0);
    }
  }
  return flat;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr std::string_view kMagic = "fastfwd-adapter-checkpoint";
constexpr int kVersion = 1;

std::string hex_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double parse_hex_double(const std::string& token) {
  double x = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, x, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != last) throw IoError("checkpoint: malformed value '" + token + "'");
  return x;
}

std::string format_alpha(const AdapterSpec& spec) {
  return spec.alpha ? hex_double(*spec.alpha) : std::string("default");
}

}  // namespace

void save_adapter_checkpoint(const Model& model, const AdapterSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const ParameterStore& params = model.parameters();
  out << kMagic << ' ' << kVersion << '\n';
  out << "variant " << to_string(spec.variant) << '\n';
  out << "rank " << spec.rank << '\n';
  out << "alpha " << format_alpha(spec) << '\n';
  out << "sites " << model.adapters().size() << '\n';
  for (const auto& [base, site] : model.adapters()) {
    for (const std::string* name : {&site.b_name, &site.a_name, &site.m_name}) {
      if (name->empty()) continue;
      const Tensor& t = params.at(*name);
      out << "tensor " << *name << ' ' << t.rank();
      for (std::size_t e : t.shape()) out << ' ' << e;
      out << '\n';
      for (std::size_t i = 0; i < t.size(); ++i) {
        out << (i ? " " : "") << hex_double(t[i]);
      }
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

void load_adapter_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kMagic || version != kVersion) throw IoError("not a fastfwd adapter checkpoint: " + path.string());

  std::string key, variant, alpha;
  std::size_t rank = 0, sites = 0;
  in >> key >> variant;
  if (key != "variant") throw IoError("checkpoint: expected 'variant'");
  in >> key >> rank;
  if (key != "rank") throw IoError("checkpoint: expected 'rank'");
  in >> key >> alpha;
  if (key != "alpha") throw IoError("checkpoint: expected 'alpha'");
  in >> key >> sites;
  if (key != "sites") throw IoError("checkpoint: expected 'sites'");

  if (sites != model.adapters().size()) {
    throw ContractError("checkpoint has " + std::to_string(sites) + " adapter sites, model has " +
                        std::to_string(model.adapters().size()));
  }
  const AdapterVariant v = parse_adapter_variant(variant);
  for (const auto& [base, site] : model.adapters()) {
    if (site.variant != v || site.rank != rank) {
      throw ContractError("checkpoint spec (" + variant + ", rank " + std::to_string(rank) +
                          ") does not match adapter site '" + base + "'");
    }
    const double scale = alpha == "default" ? 1.0 : parse_hex_double(alpha) / static_cast<double>(rank);
    if (scale != site.scale) throw ContractError("checkpoint alpha does not match adapter site '" + base + "'");
  }

  ParameterStore& params = model.parameters();
  while (in >> key) {
    if (key == "end") return;
    if (key != "tensor") throw IoError("checkpoint: unexpected token '" + key + "'");
    std::string name;
    std::size_t rank_dims = 0;
    in >> name >> rank_dims;
    Shape shape(rank_dims);
    for (auto& e : shape) in >> e;
    if (!in) throw IoError("checkpoint: truncated tensor header");
    Tensor& dst = params.at(name);
    if (dst.shape() != shape || !dst.requires_grad()) {
      throw ContractError("checkpoint tensor '" + name + "' " + to_string(shape) +
                          " does not match a trainable model tensor");
    }
    std::string token;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (!(in >> token)) throw IoError("checkpoint: truncated values for '" + name + "'");
      dst[i] = parse_hex_double(token);
    }
  }
  throw IoError("checkpoint: missing 'end' marker");
}

}  // namespace fastfwd
