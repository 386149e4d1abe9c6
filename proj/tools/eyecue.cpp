#include "eyecue/cli.hpp"

int main(int argc, char** argv) { return eyecue::run_cli(argc, argv); }
