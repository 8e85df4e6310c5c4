#include "commands.hpp"

int main(int argc, char** argv) { return rupf::cli::run_cli(argc, argv); }
