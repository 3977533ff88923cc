#include <cstdio>

int main() {
  std::puts("mmcaps cli placeholder");
  return 0;
}
