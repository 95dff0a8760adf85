#include "udream/cli.hpp"

int main(int argc, char** argv) { return udream::cli::run(argc, argv); }
