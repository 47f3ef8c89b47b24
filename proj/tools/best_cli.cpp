#include "best/runtime.hpp"

int main(int argc, char** argv) { return best::run_command(argc, argv); }
