#include "amran/cli.hpp"

int main(int argc, char** argv) { return amran::cli::run_command(argc, argv); }
