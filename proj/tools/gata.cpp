// Experiment CLI. Subcommands are wired up as the corresponding modules land.
#include <cstdio>

int main() {
    std::puts("gata: no subcommands wired yet");
    return 1;
}
