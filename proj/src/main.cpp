#include "tsgan/cli.hpp"

int main(int argc, char** argv) { return tsgan::cli::run(argc, argv); }
