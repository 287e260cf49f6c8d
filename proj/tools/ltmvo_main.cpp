#include "ltmvo/cli.hpp"

int main(int argc, char** argv) { return ltmvo::cli::dispatch(argc, argv); }
