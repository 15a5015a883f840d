#include "indigo/commands.hpp"

int main(int argc, char** argv) { return indigo::run_command(argc, argv); }
