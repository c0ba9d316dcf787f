#include "hybem/commands.hpp"

int main(int argc, char** argv) { return hybem::cli::run_cli(argc, argv); }
