// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "pcdp/cli.hpp"

int main(int argc, char** argv) { return pcdp::cli::run(argc, argv, std::cout, std::cerr); }
