#include "dis2/cli.h"

int main(int argc, char** argv) { return dis2::cli_main(argc, argv); }
