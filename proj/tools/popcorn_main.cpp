#include "popcorn/cli.hpp"

int main(int argc, char** argv) { return popcorn::cli_main(argc, argv); }
