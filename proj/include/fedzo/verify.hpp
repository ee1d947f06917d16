#pragma once

#include <functional>
#include <string>
#include <vector>

namespace fedzo {

// Pass thresholds of the acceptance checks.
namespace tol {
inline constexpr double kGradientRel = 1e-4;
inline constexpr double kBoundFactor = 5.0;        // ‖Σ̂ − I‖₂ ≤ 5 √(n/K)
inline constexpr double kSteinRel = 0.05;
inline constexpr double kSaliencyRel = 1e-3;
inline constexpr double kMemoryRatio = 0.25;
inline constexpr double kOracleAgreement = 1e-6;   // library vs independent oracle
}  // namespace tol

// quick: reduced sizes for `fedzo verify`; full: the acceptance settings.
enum class CheckDepth { quick, full };

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  bool skipped = false;  // too long for the requested depth
  std::string detail;
  double seconds = 0.0;
};

struct CheckInfo {
  int id;
  const char* name;
};
const std::vector<CheckInfo>& check_catalog();

// Unknown ids throw ValidationError. A check that throws is reported as a
// failure carrying the error text.
CheckResult run_check(int id, CheckDepth depth);
std::vector<CheckResult> run_checks(CheckDepth depth, const std::vector<int>& ids = {},
                                    const std::function<void(const CheckResult&)>& on_result = {});

// One line: verdict, id, name, detail, wall time.
std::string format_check(const CheckResult& r);

}  // namespace fedzo
