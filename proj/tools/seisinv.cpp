#include "seisinv/cli.hpp"

int main(int argc, char** argv) { return seisinv::cli::run(argc, argv); }
