/**
 * @file gradcheck.hpp
 * @brief Central finite-difference checks of the analytic gradients of the
 *        SCH loss and the SE block, in double precision.
 */
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace skf {

struct GradcheckResult {
    std::string name;
    std::size_t checked = 0;
    /// Entries whose stencil crosses a kink of the L1 loss (a bin difference
    /// changes sign between x - h and x + h); the derivative does not exist
    /// there, so they are not compared.
    std::size_t skipped = 0;
    double max_relative_error = 0;
    double tolerance = 0;

    /// Requires at least three quarters of the entries to be compared.
    bool passed() const { return checked > 0 && 4 * skipped <= checked + skipped && max_relative_error <= tolerance; }
};

struct GradcheckOptions {
    std::uint64_t seed = 1;
    double step = 1e-5;
    double sch_tolerance = 1e-4;
    double se_tolerance = 1e-3;
    /// Denominator floor of the relative error. Typical SCH gradients are
    /// 1 to 100; below 1e-3 the difference quotient is dominated by rounding
    /// of the summed loss, so such entries are compared absolutely.
    double floor = 1e-3;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// SCH loss on random 8x8 images with a random three-class label map, for
/// erosion radii 0 and 1, through both the image and the tensor path.
std::vector<GradcheckResult> check_sch_gradients(const GradcheckOptions& options = {});

/// Every SE parameter group and both inputs at C = 4 on 4x4 maps, with and
/// without layer norm.
std::vector<GradcheckResult> check_se_gradients(const GradcheckOptions& options = {});

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

/// One line per result; returns true when all pass.
bool report_gradcheck(std::ostream& out, const std::vector<GradcheckResult>& results);

}  // namespace skf
