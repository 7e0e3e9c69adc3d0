#include "o4a/cli.hpp"

int main(int argc, char** argv) { return o4a::run_command(argc, argv); }
