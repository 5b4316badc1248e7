#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace criteria {

struct Result {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

enum class Scope { Quick, All };

struct Criterion {
  std::string name;
  bool slow;
  Result (*run)(const std::filesystem::path& work);
};

const std::vector<Criterion>& registry();

/// Runs the selected criteria, printing one PASS/FAIL line each to `out`.
/// `only` restricts the run to the named criteria when non-empty.
std::vector<Result> run_all(Scope scope, std::ostream& out, const std::vector<std::string>& only = {},
                            std::filesystem::path work = {});

bool all_passed(const std::vector<Result>& results);

Result compositing_identity(const std::filesystem::path& work);
Result loss_oracle(const std::filesystem::path& work);
Result metric_oracle(const std::filesystem::path& work);
Result gradient_suite(const std::filesystem::path& work);
Result receptive_fields(const std::filesystem::path& work);
Result partition_example(const std::filesystem::path& work);
Result tiny_overfit(const std::filesystem::path& work);
Result ablation_ordering(const std::filesystem::path& work);
Result determinism(const std::filesystem::path& work);

}  // namespace criteria
