// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace fastfwd {

// Exit statuses of cli_dispatch.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitIo = 4,
  kExitNumeric = 5,
  kExitContract = 6,
};

// Entry point of the `fastfwd` tool. Progress goes to `out` unless --quiet,
// diagnostics to `err`.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fastfwd
