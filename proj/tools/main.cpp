#include <cstdio>

// Placeholder until the cli module lands.
int main(int, char**) {
  std::puts("turbdet: cli not wired yet");
  return 0;
}
