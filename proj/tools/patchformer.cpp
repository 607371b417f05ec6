#include "patchformer/cli.hpp"

int main(int argc, char** argv) { return patchformer::cli::run(argc, argv); }
