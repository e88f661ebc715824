#include "concurl/cli.hpp"

int main(int argc, char** argv) { return concurl::cli::run(argc, argv); }
