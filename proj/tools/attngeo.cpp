#include "attngeo/cli.hpp"

int main(int argc, char** argv) { return attngeo::cli::run(argc, argv); }
