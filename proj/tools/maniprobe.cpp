#include "maniprobe/cli.hpp"

int main(int argc, char** argv) { return maniprobe::cli::run(argc, argv); }
