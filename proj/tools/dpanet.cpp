#include "dpanet/cli/commands.hpp"

int main(int argc, char** argv) { return dpanet::cli::run(argc, argv); }
