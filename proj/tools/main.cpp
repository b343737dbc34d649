#include "mapi/cli.hpp"

int main(int argc, char** argv) { return mapi::run_cli(argc, argv); }
