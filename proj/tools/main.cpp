#include "cli.hpp"

int main(int argc, char** argv) { return dronecam::cli::run(argc, argv); }
