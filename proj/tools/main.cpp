#include "geonew/cli.hpp"

int main(int argc, char** argv) { return geonew::cli::run(argc, argv); }
