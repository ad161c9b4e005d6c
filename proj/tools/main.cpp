#include "ecgcrnn/cli.hpp"

int main(int argc, char** argv) { return ecgcrnn::cli::run(argc, argv); }
