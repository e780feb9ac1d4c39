#include "robtrack/cli.hpp"

int main(int argc, char** argv) { return robtrack::cli::main_entry(argc, argv); }
