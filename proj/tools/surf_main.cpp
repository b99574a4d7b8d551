#include "surf/cli.hpp"

int main(int argc, char** argv) { return surf::run(argc, argv); }
