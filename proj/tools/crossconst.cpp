#include "crossconst/cli.hpp"

int main(int argc, char** argv) { return crossconst::cli::run(argc, argv); }
