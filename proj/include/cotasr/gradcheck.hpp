#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cotasr::gradcheck {

struct SuiteOptions {
  std::size_t instances = 50;
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Negates the analytic gradient of the named component (harness self-test).
  std::optional<std::string> inject_fault;
};

struct ComponentResult {
  std::string component;
  std::size_t instances = 0;
  std::size_t parameters = 0;  // coordinates checked, summed over instances
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// "ctc", "ce", "adapter", "linear_adapter", "encoder", "decoder", "joint".
const std::vector<std::string>& components();

// Random micro-instances of one component, checked against central
// differences. Throws InputError for an unknown name.
ComponentResult check_component(const std::string& name, const SuiteOptions& options);
std::vector<ComponentResult> run_suite(const SuiteOptions& options);

std::string format_table(const std::vector<ComponentResult>& results);

}  // namespace cotasr::gradcheck
