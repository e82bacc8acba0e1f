#include "evsmooth/cli.hpp"

int main(int argc, char** argv) { return evsmooth::cli::run(argc, argv); }
