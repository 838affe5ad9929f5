#include "aa/cli.hpp"

int main(int argc, char** argv) {
    return aa::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
