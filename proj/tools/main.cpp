#include "cli.hpp"

int main(int argc, char** argv) { return phantom::cli::run(argc, argv); }
