#pragma once
namespace mapi { int run_cli(int argc, char** argv); }
