#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace avio::acceptance {

enum class Status { kPass, kFail, kSkip };

struct CriterionResult {
  int id = 0;
  std::string name;
  Status status = Status::kFail;
  std::string detail;
};

/// Runs the listed criteria (all when empty), printing one line per criterion.
std::vector<CriterionResult> run_all(const std::vector<int>& only, std::ostream& out);

/// Skipped criteria count as passed.
bool all_passed(const std::vector<CriterionResult>& results);

// Individual criteria.
CriterionResult zero_noise_loop();
CriterionResult heading_benefit();
CriterionResult atlanta_vs_manhattan();
CriterionResult information_accumulation();
CriterionResult manhattan_detection();
CriterionResult filter_numerics();
CriterionResult geometry_oracles();
CriterionResult evaluation_correctness();
CriterionResult euroc_regression();

}  // namespace avio::acceptance
