#include "pdt/cli.hpp"

int main(int argc, char** argv) { return pdt::run_cli(argc, argv); }
