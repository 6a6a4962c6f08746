#include "sphereflow/cli.hpp"

int main(int argc, char** argv) { return sphereflow::cli::run(argc, argv); }
