#include "laconv/commands.hpp"

int main(int argc, char** argv) { return laconv::run_cli(argc, argv); }
