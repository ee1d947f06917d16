// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Optional arguments select criteria by id; --quick uses the
// reduced sizes of `fedzo verify`.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "fedzo/verify.hpp"

int main(int argc, char** argv) {
  fedzo::CheckDepth depth = fedzo::CheckDepth::full;
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--quick") {
      depth = fedzo::CheckDepth::quick;
    } else {
      ids.push_back(std::atoi(a.c_str()));
    }
  }
  int failed = 0;
  fedzo::run_checks(depth, ids, [&](const fedzo::CheckResult& r) {
    std::printf("%s\n", fedzo::format_check(r).c_str());
    std::fflush(stdout);
    failed += !r.pass;
  });
  std::printf("%d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
