#include "cli.h"

int main(int argc, char** argv) { return ansel::cli::run(argc, argv); }
