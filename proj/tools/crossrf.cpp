#include "crossrf/cli.hpp"

int main(int argc, char** argv) { return crossrf::cli::run(argc, argv); }
