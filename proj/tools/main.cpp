#include "mbrec/cli.hpp"

int main(int argc, char** argv) { return mbrec::cli::run(argc, argv); }
