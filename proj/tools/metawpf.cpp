#include "metawpf/cli.hpp"

int main(int argc, char** argv) { return metawpf::run_cli(argc, argv); }
