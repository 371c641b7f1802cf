#include <string>
#include <vector>

#include "mask2flow/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return m2f::cli::run(std::move(args));
}
