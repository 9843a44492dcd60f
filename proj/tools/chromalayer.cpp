#include "chromalayer/cli.hpp"

int main(int argc, char** argv) { return chromalayer::cli::run(argc, argv); }
