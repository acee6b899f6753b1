#include "crb/cli.hpp"

int main(int argc, char** argv) { return crb::cli::run(argc, argv); }
