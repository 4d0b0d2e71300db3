#include "cli.hpp"

int main(int argc, char** argv) { return a2snas::cli::cli_main(argc, argv); }
