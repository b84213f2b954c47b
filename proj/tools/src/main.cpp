#include "storyviz/cli.hpp"

int main(int argc, char** argv) { return storyviz::cli::run(argc, argv); }
