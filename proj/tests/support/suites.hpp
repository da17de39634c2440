#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

// Property suites shared by the unit tests and the acceptance binary. Each
// returns every failed check rather than stopping at the first one.
namespace suites {

struct Outcome {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  bool pass() const { return failures.empty(); }
  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& what) { notes.push_back(what); }
  std::string summary() const;
};

/// Finite-difference checks of every layer and loss, `configs` random
/// configurations per case.
Outcome gradient_suite(std::size_t configs);

Outcome distill_math_suite();

Outcome dsp_suite();

Outcome metric_suite();

/// Identical branches stay bit-identical; a lone branch distilling from
/// itself starts with zero divergence.
Outcome symmetry_suite();

Outcome format_suite(const std::filesystem::path& scratch_dir);

}  // namespace suites
