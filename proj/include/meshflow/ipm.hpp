#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meshflow/model.hpp"

namespace meshflow {

struct LineSearchOptions {
    double armijo = 1e-4;       // sufficient decrease fraction
    double backtrack = 0.5;     // step contraction
    int max_backtracks = 40;
    bool second_order_correction = true;
};

struct SolverOptions {
    double tol_kkt = 1e-8;
    int max_iter = 200;
    double mu_init = 0.1;
    double mu_shrink = 0.2;
    double fraction_to_boundary = 0.995;
    double inertia_regularization_init = 1e-8;
    double bound_relax = 1e-8;  // relative widening of every bound
    LineSearchOptions linesearch;
    bool verbose = false;  // iteration log on stderr

    void validate() const;  // throws InvalidSpec
};

enum class SolverStatus { Optimal, MaxIterations, InfeasibleDetected, NumericFailure };
const char* to_string(SolverStatus status);

struct KktResiduals {
    double stationarity = 0.0;
    double feasibility = 0.0;
    double complementarity = 0.0;
};

struct SolverResult {
    SolverStatus status = SolverStatus::NumericFailure;
    std::vector<double> primal;
    double objective = 0.0;  // unscaled, including any penalty term
    int iterations = 0;
    KktResiduals kkt_residuals;  // scaled, as used by the stopping test
    double wall_time = 0.0;      // seconds
    std::vector<double> mu_history;

    // unscaled multipliers of the original problem
    std::vector<double> multipliers;  // per row; >= 0 on LessEqual rows
    std::vector<double> bound_lower;  // per variable
    std::vector<double> bound_upper;
    double objective_scale = 1.0;
    std::vector<double> row_scale;
};

/// Primal-dual interior point: monotone barrier, inertia-corrected Newton
/// steps on the augmented system, l1-merit backtracking line search.
SolverResult solve(const ConstraintSystem& system, const SolverOptions& options = {},
                   std::optional<std::span<const double>> start = std::nullopt);

/// v = 1 (V = 1), angles 0, flows and losses 1e-4, generators at mid-range,
/// everything clipped into bounds. Throws EmptyInterior for lower > upper.
std::vector<double> flat_start(const ConstraintSystem& system);

/// flat_start moved by seeded uniform noise: +-spread of the range on boxed
/// variables, +-spread absolute otherwise, kept strictly inside the bounds.
/// Pinned variables are left alone.
std::vector<double> perturbed_start(const ConstraintSystem& system, std::uint64_t seed,
                                    double spread = 0.05);

struct DerivativeReport {
    struct PerTag {
        double jacobian = 0.0;
        double hessian = 0.0;
        int rows = 0;
    };
    std::array<PerTag, kFormTagCount> by_tag{};
    double worst_jacobian = 0.0;
    double worst_hessian = 0.0;

    const PerTag& operator[](FormTag tag) const { return by_tag[static_cast<std::size_t>(tag)]; }
};

/// Central-difference check of every row's gradient and Hessian at `point`.
/// Errors are |analytic - numeric| / max(1, |analytic|).
DerivativeReport derivative_check(const ConstraintSystem& system, std::span<const double> point,
                                  double step = 1e-6);

/// KKT residuals re-evaluated from a result, independent of solver state.
KktResiduals kkt_certificate(const ConstraintSystem& system, const SolverResult& result,
                             const SolverOptions& options = {});

}  // namespace meshflow
