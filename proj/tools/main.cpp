#include "cli.hpp"

int main(int argc, char** argv) { return eranet::cli::run(argc, argv); }
