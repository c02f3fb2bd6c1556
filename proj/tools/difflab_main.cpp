#include <iostream>
#include <string>
#include <vector>

#include "difflab/harness.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return difflab::run_cli(args, std::cout, std::cerr);
}
