// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "nbsim/cli.h"

int main(int argc, char** argv) {
  return nbsim::cli::run(argc, argv, std::cout, std::cerr);
}
