#include "tcprune/cli.hpp"

int main(int argc, char** argv) { return tcprune::dispatch(argc, argv); }
