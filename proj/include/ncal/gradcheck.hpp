#ifndef NCAL_GRADCHECK_HPP_
#define NCAL_GRADCHECK_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ncal {

inline constexpr double kRelErrFloor = 1e-3;

/// Entrywise relative error |a - f| / max(|a|, |f|, floor_frac * max|a|),
/// maximized over entries. The floor keeps components that are zero by
/// structure (e.g. biases feeding batch norm) from dividing FD noise by 0.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor_frac = kRelErrFloor);

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string worst;  // which case or primitive produced max_rel_err
};

struct TheoremResult {
  std::size_t channels = 0;
  std::size_t nonzero = 0;             // ||grad|| > 1e-12 ||H_DL||
  std::size_t improved = 0;            // line search through the power normalization
  std::size_t improved_fixed_gamma = 0;  // line search along the fixed-gamma gradient
  double min_grad_ratio = 0.0;         // min ||grad|| / ||H_DL||
  double mean_gain_nats = 0.0;
  bool passed = false;
};

/// FD check of each tape primitive's adjoint on random small operands.
SuiteResult check_primitive_adjoints(std::uint64_t seed, double tol = 1e-7);
/// Closed-form grad_V R against FD, M=8, K=4.
SuiteResult check_sumrate_v_grad(std::uint64_t seed, std::size_t instances = 50,
                                 double tol = 1e-6);
/// Closed-form fixed-gamma grad_X R against FD, M=8, K=4.
SuiteResult check_zf_input_grad(std::uint64_t seed, std::size_t instances = 50,
                                double tol = 1e-6);
/// Every trainable scalar of a tiny end-to-end model (M=4, K=2, L=2,
/// hidden [8], batch norm in train mode) against FD of the batch loss.
SuiteResult check_pipeline_grad(std::uint64_t seed, double tol = 1e-5);
/// Nonzero ZF-input gradient at X = H_DL and a backtracking ascent step.
TheoremResult check_theorem_calibration(std::uint64_t seed, std::size_t channels = 100);

struct GradCheckReport {
  std::vector<SuiteResult> suites;
  TheoremResult theorem;
  bool passed() const;
};

GradCheckReport run_grad_checks(std::uint64_t seed);
std::string format_report(const GradCheckReport& report);

}  // namespace ncal

#endif  // NCAL_GRADCHECK_HPP_
