#include "mcms/cli.hpp"

int main(int argc, char **argv) { return mcms::run_cli(argc, argv); }
