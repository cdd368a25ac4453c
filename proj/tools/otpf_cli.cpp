#include "otpf/cli.hpp"

int main(int argc, char** argv) { return otpf::cli::run(argc, argv); }
