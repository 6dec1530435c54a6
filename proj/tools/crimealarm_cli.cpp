// Placeholder main; the full command surface lands with the pipeline.
#include <cstdio>

int main() {
    std::puts("crimealarm: commands not wired up yet");
    return 1;
}
