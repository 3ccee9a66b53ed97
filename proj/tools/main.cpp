#include <string>
#include <vector>

#include "limeil/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return limeil::dispatch(args);
}
