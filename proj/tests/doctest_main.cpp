#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "matadv/tensor.hpp"

int main(int argc, char** argv) {
  matadv::ad::retain_freed_memory();
  doctest::Context context(argc, argv);
  return context.run();
}
