#include <cstdio>

int main() {
  std::puts("mfd: pipeline CLI (under construction)");
  return 0;
}
