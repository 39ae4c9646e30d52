#include "forgrad/cli.hpp"

int main(int argc, char** argv) { return forgrad::cli_dispatch(argc, argv); }
