// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "fastfwd/errors.hpp"

namespace fastfwd {

const CsvSchema kTrainLogSchema = {"step",     "kind",         "train_loss",    "val_loss",     "test_loss",
                                   "flops_total", "flops_forward", "flops_backward", "flops_opt", "flops_ff_val",
                                   "flops_ff_set", "flops_eval",  "wall_ms"};
const CsvSchema kStagesSchema = {"stage", "entry_step", "tau_star", "evals", "grad_norm", "cond_mean",
                                 "batch_consistency"};
const CsvSchema kPlaneSchema = {"a", "b", "loss"};
const CsvSchema kGradSimSchema = {"t", "s", "cosine"};
const CsvSchema kSweepSchema = {"key", "baseline_flops", "ff_flops", "savings"};

std::string format_csv_number(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string format_csv_cell(const CsvCell& cell) {
  struct Visitor {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(std::uint64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const { return format_csv_number(v); }
    std::string operator()(const std::string& v) const { return v; }
  };
  return std::visit(Visitor{}, cell);
}

void write_csv(const std::filesystem::path& path, const CsvSchema& schema, const std::vector<CsvRow>& rows) {
  std::string out;
  for (std::size_t i = 0; i < schema.size(); ++i) out += (i ? "," : "") + schema[i];
  out += '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != schema.size()) {
      throw ContractError("write_csv: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                          " cells, schema has " + std::to_string(schema.size()));
    }
    for (std::size_t i = 0; i < rows[r].size(); ++i) out += (i ? "," : "") + format_csv_cell(rows[r][i]);
    out += '\n';
  }
  write_text(path, out);
}

namespace {

CsvCell opt(const std::optional<double>& v) { return v ? CsvCell(*v) : CsvCell(std::monostate{}); }
CsvCell opt(const std::optional<std::uint64_t>& v) { return v ? CsvCell(*v) : CsvCell(std::monostate{}); }

}  // namespace

std::vector<CsvRow> trainlog_rows(const TrainLog& log) {
  std::vector<CsvRow> rows;
  rows.reserve(log.size());
  for (const auto& r : log) {
    const FlopsLedger& f = r.flops;
    rows.push_back({r.step, std::string(to_string(r.kind)), opt(r.train_loss), opt(r.val_loss), opt(r.test_loss),
                    f.total(), f.get(FlopsCategory::forward_train), f.get(FlopsCategory::backward_train),
                    f.get(FlopsCategory::optimizer_update), f.get(FlopsCategory::ff_val_forward),
                    f.get(FlopsCategory::ff_param_set), f.get(FlopsCategory::eval_forward), r.wall_ms});
  }
  return rows;
}

std::vector<CsvRow> stage_rows(const std::vector<StageRecord>& stages) {
  std::vector<CsvRow> rows;
  for (const auto& s : stages) {
    rows.push_back({static_cast<std::uint64_t>(s.stage), s.entry_step, static_cast<std::uint64_t>(s.tau_star),
                    static_cast<std::uint64_t>(s.evals), opt(s.diagnostics.grad_norm), opt(s.diagnostics.cond_mean),
                    opt(s.diagnostics.batch_consistency)});
  }
  return rows;
}

std::vector<CsvRow> plane_rows(const PlaneGrid& grid) {
  std::vector<CsvRow> rows;
  for (std::size_t i = 0; i < grid.a_axis.size(); ++i) {
    for (std::size_t j = 0; j < grid.b_axis.size(); ++j) {
      rows.push_back({grid.a_axis[i], grid.b_axis[j], grid.loss[i * grid.resolution + j]});
    }
  }
  return rows;
}

std::vector<CsvRow> gradsim_rows(const GradSimilarity& sim) {
  std::vector<CsvRow> rows;
  rows.reserve(sim.entries.size());
  for (const auto& e : sim.entries) rows.push_back({e.t, e.s, opt(e.cosine)});
  return rows;
}

std::vector<CsvRow> sweep_rows(const std::vector<SweepRow>& rows) {
  std::vector<CsvRow> out;
  for (const auto& r : rows) out.push_back({r.key, r.baseline_flops, opt(r.ff_flops), opt(r.savings)});
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fastfwd
