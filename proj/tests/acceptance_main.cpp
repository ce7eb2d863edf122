#include "ambiloc/acceptance.hpp"

#include <cstdio>
#include <cstdlib>
#include <string>

// Usage: ambiloc_acceptance [criterion ids...]
int main(int argc, char** argv) {
    ambiloc::AcceptanceOptions opts;
    for (int i = 1; i < argc; ++i) opts.only.push_back(std::atoi(argv[i]));
    const auto results = ambiloc::run_acceptance(opts, [](const ambiloc::CriterionResult& r) {
        std::printf("%s\n", ambiloc::format_result(r).c_str());
        std::fflush(stdout);
    });
    return ambiloc::all_passed(results) ? 0 : 1;
}
