// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "caninelab/cli.hpp"

int main(int argc, char** argv) { return caninelab::cli::run(argc, argv, std::cout, std::cerr); }
