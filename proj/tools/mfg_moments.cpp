#include "mfgm/cli.hpp"

int main(int argc, char** argv) { return mfgm::cli::execute(argc, argv); }
