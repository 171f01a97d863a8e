#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "pflab/runtime.hpp"

int main(int argc, char** argv) {
  pflab::runtime_init();
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
