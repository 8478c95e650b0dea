#include "hetseg/cli.hpp"

int main(int argc, char** argv) { return hetseg::cli_dispatch(argc, argv); }
