#include "icl/cli.hpp"

int main(int argc, char **argv) { return icl::run(argc, argv); }
