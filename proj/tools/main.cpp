#include "hrmedseg/cli.hpp"

int main(int argc, char** argv) { return hrmedseg::cli_dispatch(argc, argv); }
