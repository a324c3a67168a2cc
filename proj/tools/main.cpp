#include "siamlite/cli.hpp"

int main(int argc, char** argv) { return siamlite::run(argc, argv); }
