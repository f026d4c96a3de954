#pragma once

#include <filesystem>
#include <iosfwd>

namespace qphoton {

/// Runs every module's invariant suite at reduced scale and prints one
/// "PASS"/"FAIL" verdict per suite. The vacuum-reference suite reads (or
/// creates) its cache under `cache_dir`. Returns the number of failed suites.
int run_selftest(const std::filesystem::path& cache_dir, std::ostream& out);

}  // namespace qphoton
