#include <vector>

#include "temprox/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return temprox::cli::dispatch(std::move(args));
}
