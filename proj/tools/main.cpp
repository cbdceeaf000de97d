#include "lesionmap/cli.hpp"

int main(int argc, char** argv) { return lesionmap::cli::run_cli(argc, argv); }
