// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fastfwd/experiments.hpp"
#include "fastfwd/fastforward.hpp"

namespace fastfwd {

// Empty cells (monostate) mark undefined values.
using CsvCell = std::variant<std::monostate, std::int64_t, std::uint64_t, double, std::string>;
using CsvRow = std::vector<CsvCell>;
using CsvSchema = std::vector<std::string>;

extern const CsvSchema kTrainLogSchema;
extern const CsvSchema kStagesSchema;
extern const CsvSchema kPlaneSchema;
extern const CsvSchema kGradSimSchema;
extern const CsvSchema kSweepSchema;

// Doubles use 17 significant digits, so every value round-trips.
std::string format_csv_number(double x);
std::string format_csv_cell(const CsvCell& cell);

// Header row, then one line per row, all '\n'-terminated. ContractError if a
// row's width differs from the schema, IoError if the file cannot be
// written.
void write_csv(const std::filesystem::path& path, const CsvSchema& schema, const std::vector<CsvRow>& rows);

std::vector<CsvRow> trainlog_rows(const TrainLog& log);
std::vector<CsvRow> stage_rows(const std::vector<StageRecord>& stages);
std::vector<CsvRow> plane_rows(const PlaneGrid& grid);
std::vector<CsvRow> gradsim_rows(const GradSimilarity& sim);
std::vector<CsvRow> sweep_rows(const std::vector<SweepRow>& rows);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace fastfwd
