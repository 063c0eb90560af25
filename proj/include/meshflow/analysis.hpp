#pragma once

#include <array>
#include <complex>
#include <span>
#include <vector>

#include "meshflow/model.hpp"

namespace meshflow {

/// Relaxation gaps of the loss cones: gap_po = p_o - (p^2+q^2)/V R, gap_qo
/// likewise with X. Zero at an AC-feasible point.
struct GapReport {
    std::vector<double> gap_po;
    std::vector<double> gap_qo;
    double gap_po_max = 0.0;
    double gap_qo_max = 0.0;
    std::size_t argmax_po = 0;
    std::size_t argmax_qo = 0;

    double gap_po_min() const;
    double gap_qo_min() const;
};

GapReport compute_gaps(const OpfPoint& point, const Network& network);
GapReport compute_gaps(const ConstraintSystem& system, std::span<const double> solution,
                       const Network& network);

/// Sending-end quantities a meter would see, shunt injections included.
struct MeasurableFlows {
    std::vector<double> p_tilde, q_tilde;
    std::vector<double> i_tilde_sq;   // (p~^2 + q~^2) / V_s
    std::vector<double> delta_i_sq;   // |i_s|^2 - |i~_s|^2
    std::vector<double> k_effective;  // K~ + delta; +inf when unrated
    std::vector<double> p_shunt, q_shunt;  // V_s G_s, V_s B_s
    std::vector<char> violated;            // i~^2 > K~ beyond the tolerance

    int violations() const;
};

/// Δ²I for one branch end: -V B^2 + 2 q B - V G^2 - 2 p G.
double delta_i_sq(double v_sq, double p, double q, double g, double b);

MeasurableFlows measurable_flows(const OpfPoint& point, const Network& network, double tolerance = 1e-6);

/// Phasor solution rebuilt from a primal point.
struct PhysicalSolution {
    std::vector<double> v, theta;  // per bus, reference angle 0
    std::vector<double> p_gen, q_gen;
    std::vector<double> p_flow, q_flow;
    /// Largest |theta_s - theta_r - theta_l| over branches outside the
    /// spanning tree, i.e. how far the branch angles are from closing every
    /// cycle.
    double cycle_closure = 0.0;
};

/// v = sqrt(V); bus angles by breadth-first propagation of theta_l from the
/// reference bus. Exact points keep their nodal angles.
PhysicalSolution recover_solution(const OpfPoint& point, const Network& network);

struct FormatResiduals {
    int format = 0;
    std::array<double, kFormTagCount> worst{};  // per tag; 0 when absent
    double max = 0.0;
};

/// Residuals of each listed format's equation rows at one point. Inequality
/// rows count only their violation.
std::vector<FormatResiduals> cross_format_residuals(std::span<const double> solution,
                                                    const Network& network, Family family,
                                                    std::span<const int> formats);

/// Per-bus complex power mismatch S - (generation - demand) from an
/// admittance matrix assembled independently of the branch-flow rows.
struct YbusReport {
    std::vector<double> mismatch;
    double max = 0.0;
    std::size_t argmax = 0;
};

std::vector<std::vector<std::complex<double>>> admittance_matrix(const Network& network);
YbusReport ybus_oracle(const PhysicalSolution& solution, const Network& network);

}  // namespace meshflow
