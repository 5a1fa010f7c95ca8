#include "selfbc/cli.hpp"

int main(int argc, char** argv) { return selfbc::cli::dispatch(argc, argv); }
