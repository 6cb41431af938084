#include "cirnet/cli.hpp"

int main(int argc, char** argv) { return cirnet::cli::run(argc, argv); }
