// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    return modref::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
