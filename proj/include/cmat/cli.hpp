#pragma once
// Command-line surface: dataset generation, two-stage training, evaluation,
// gradient checks and ablation sweeps, all reproducible from flags + seed.
// run() is callable in-process so tests can drive commands directly.

#include <string>
#include <vector>

namespace cmat::cli {

// Exit codes: 0 ok, 2 usage, 3 validation, 4 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace cmat::cli
