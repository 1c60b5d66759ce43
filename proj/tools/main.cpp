// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "fastfwd/cli.hpp"

int main(int argc, char** argv) { return fastfwd::cli_dispatch(argc, argv, std::cout, std::cerr); }
