#include "cli.hpp"

int main(int argc, char** argv) { return tss::cli::run(argc, argv); }
