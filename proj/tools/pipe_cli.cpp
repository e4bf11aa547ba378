#include "pipe/cli.hpp"

int main(int argc, char** argv) { return riskpipe::run_cli(argc, argv); }
