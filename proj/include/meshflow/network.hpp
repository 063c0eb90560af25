#pragma once

#include <cstddef>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

#include "meshflow/errors.hpp"

namespace meshflow {

enum class BusKind { PQ, PV, Reference };

/// Per-unit bus record. Shunt values are the nodal shunt only; branch shunts
/// live on BranchPi.
struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double p_demand = 0.0;
    double q_demand = 0.0;
    double shunt_conductance = 0.0;
    double shunt_susceptance = 0.0;
    double v_min = 0.9;
    double v_max = 1.1;
    double base_kv = 0.0;
};

/// Cost coefficients are scaled so that evaluating with per-unit power yields
/// currency.
struct Generator {
    int bus_id = 0;
    double p_min = 0.0;
    double p_max = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double cost_quadratic = 0.0;
    double cost_linear = 0.0;
    double cost_constant = 0.0;
    bool has_cost = true;

    double cost(double p) const { return (cost_quadratic * p + cost_linear) * p + cost_constant; }
};

inline constexpr double kHalfPi = 1.57079632679489661923;

/// Two-port Pi model: series R + jX between the terminals, shunt G + jB at
/// each end.
struct BranchPi {
    int from_bus = 0;
    int to_bus = 0;
    double resistance = 0.0;
    double reactance = 0.0;
    double shunt_susceptance_s = 0.0;
    double shunt_susceptance_r = 0.0;
    double shunt_conductance_s = 0.0;
    double shunt_conductance_r = 0.0;
    std::optional<double> ampacity_sq;  // squared per-unit current bound
    double angle_min = -kHalfPi;
    double angle_max = kHalfPi;
};

/// Shunt and series parameters of a Pi equivalent.
struct PiParameters {
    double resistance = 0.0;
    double reactance = 0.0;
    double shunt_conductance_s = 0.0;
    double shunt_susceptance_s = 0.0;
    double shunt_conductance_r = 0.0;
    double shunt_susceptance_r = 0.0;
};

/// Folds an off-nominal tap at the sending end into an asymmetric Pi.
/// Throws NonpositiveTap / NonzeroPhaseShift.
PiParameters transformer_to_pi(double series_r, double series_x, double total_charging_b,
                               double tap_ratio, double phase_shift);

/// MVA rating to squared per-unit current at 1.0 p.u. voltage. Zero means
/// unconstrained.
std::optional<double> ampacity_sq_from_rating(double rate_mva, double base_mva);

/// Immutable, validated per-unit network. Construction throws Error on any
/// invariant violation; nothing is repaired.
class Network {
  public:
    Network(double base_mva, std::vector<Bus> buses, std::vector<Generator> generators,
            std::vector<BranchPi> branches);

    double base_mva() const noexcept { return base_mva_; }
    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Generator>& generators() const noexcept { return generators_; }
    const std::vector<BranchPi>& branches() const noexcept { return branches_; }

    std::size_t num_buses() const noexcept { return buses_.size(); }
    std::size_t num_generators() const noexcept { return generators_.size(); }
    std::size_t num_branches() const noexcept { return branches_.size(); }

    /// Position of a bus id in buses(). Throws InvalidNetwork for unknown ids.
    std::size_t bus_index(int id) const;
    std::size_t from_index(std::size_t branch) const { return from_index_[branch]; }
    std::size_t to_index(std::size_t branch) const { return to_index_[branch]; }
    std::size_t gen_bus_index(std::size_t gen) const { return gen_bus_index_[gen]; }
    std::size_t reference_index() const noexcept { return reference_index_; }

    /// Nodal shunt plus the Pi shunts of every incident branch end. These are
    /// the G_n, B_n that enter the nodal balance.
    double total_shunt_conductance(std::size_t bus) const { return total_g_[bus]; }
    double total_shunt_susceptance(std::size_t bus) const { return total_b_[bus]; }

  private:
    double base_mva_;
    std::vector<Bus> buses_;
    std::vector<Generator> generators_;
    std::vector<BranchPi> branches_;
    std::unordered_map<int, std::size_t> index_of_;
    std::vector<std::size_t> from_index_;
    std::vector<std::size_t> to_index_;
    std::vector<std::size_t> gen_bus_index_;
    std::vector<double> total_g_;
    std::vector<double> total_b_;
    std::size_t reference_index_ = 0;
};

/// Node-by-branch incidence. a_plus: +1 at the sending end, -1 at the
/// receiving end. a_minus: -1 at the receiving end only.
struct Incidence {
    Eigen::SparseMatrix<double> a_plus;
    Eigen::SparseMatrix<double> a_minus;
};

Incidence build_incidence(const Network& network);

}  // namespace meshflow
