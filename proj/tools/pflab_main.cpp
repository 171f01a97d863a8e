#include "pflab/cli.hpp"
#include "pflab/runtime.hpp"

int main(int argc, char** argv) {
  pflab::runtime_init();
  return pflab::run_cli(argc, argv);
}
