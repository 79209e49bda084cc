#pragma once

// Invariant suites behind `mutan check`. Each check compares a library
// computation with an element-wise reference and reports the error.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mutan::cli {

struct CheckRow {
    std::string suite;
    std::string check;
    std::uint64_t seed = 0;
    double error = 0.0;
    double tolerance = 0.0;

    bool passed() const { return error < tolerance; }
};

struct CheckOptions {
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    bool inject_fault = false;
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"equiv", "grad", "sketch", "ablate-linearity"};
    return names;
}

/// Rows come back in a fixed order regardless of the thread count.
std::vector<CheckRow> run_suite(const std::string& suite, const CheckOptions& options);

}  // namespace mutan::cli
