#include "flnas/cli.hpp"

int main(int argc, char** argv) { return flnas::cli::run(argc, argv); }
