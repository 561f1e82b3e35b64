#include "logre/cli.hpp"

int main(int argc, char** argv) { return logre::cli::run(argc, argv); }
