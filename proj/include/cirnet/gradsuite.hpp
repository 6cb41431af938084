#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cirnet::gradsuite {

struct CaseResult {
  std::string name;
  bool pass = false;
  double max_rel_err = 0.0;  // worst over seeds
  int64_t checked = 0;       // coordinates probed over all seeds
};

// Central-difference checks for every differentiable op and every composite
// unit, each run across `seeds` seeds. A case passes when the worst relative
// error stays below tol.
std::vector<CaseResult> run_all(uint64_t base_seed, int seeds, double tol);

bool all_pass(const std::vector<CaseResult>& results);

}  // namespace cirnet::gradsuite
