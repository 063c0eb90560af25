#include "meshflow/network.hpp"

#include <cmath>
#include <complex>
#include <queue>
#include <string>

namespace meshflow {

namespace {

std::string bus_label(int id) { return "bus " + std::to_string(id); }

std::string branch_label(std::size_t l, const BranchPi& br) {
    return "branch " + std::to_string(l + 1) + " (" + std::to_string(br.from_bus) + "-" +
           std::to_string(br.to_bus) + ")";
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

PiParameters transformer_to_pi(double series_r, double series_x, double total_charging_b,
                               double tap_ratio, double phase_shift) {
    if (!(tap_ratio > 0.0) || !std::isfinite(tap_ratio)) {
        throw Error(ErrorKind::NonpositiveTap, "tap ratio " + std::to_string(tap_ratio));
    }
    if (phase_shift != 0.0) {
        throw Error(ErrorKind::NonzeroPhaseShift, "phase shift " + std::to_string(phase_shift));
    }
    PiParameters pi;
    if (tap_ratio == 1.0) {
        pi.resistance = series_r;
        pi.reactance = series_x;
        pi.shunt_susceptance_s = total_charging_b / 2.0;
        pi.shunt_susceptance_r = total_charging_b / 2.0;
        return pi;
    }
    const double a = tap_ratio;
    const std::complex<double> y_series = 1.0 / std::complex<double>(series_r, series_x);
    const std::complex<double> y_s =
        (1.0 / a) * (1.0 / a - 1.0) * y_series + std::complex<double>(0.0, total_charging_b / (2.0 * a * a));
    const std::complex<double> y_r =
        (1.0 - 1.0 / a) * y_series + std::complex<double>(0.0, total_charging_b / 2.0);
    pi.resistance = a * series_r;
    pi.reactance = a * series_x;
    pi.shunt_conductance_s = y_s.real();
    pi.shunt_susceptance_s = y_s.imag();
    pi.shunt_conductance_r = y_r.real();
    pi.shunt_susceptance_r = y_r.imag();
    return pi;
}

std::optional<double> ampacity_sq_from_rating(double rate_mva, double base_mva) {
    if (rate_mva <= 0.0) return std::nullopt;
    const double per_unit = rate_mva / base_mva;
    return per_unit * per_unit;
}

Network::Network(double base_mva, std::vector<Bus> buses, std::vector<Generator> generators,
                 std::vector<BranchPi> branches)
    : base_mva_(base_mva),
      buses_(std::move(buses)),
      generators_(std::move(generators)),
      branches_(std::move(branches)) {
    if (!(base_mva_ > 0.0) || !finite(base_mva_)) {
        throw Error(ErrorKind::InvalidNetwork, "base MVA must be positive");
    }
    if (buses_.empty()) throw Error(ErrorKind::InvalidNetwork, "network has no buses");

    int references = 0;
    for (std::size_t n = 0; n < buses_.size(); ++n) {
        const Bus& b = buses_[n];
        if (!index_of_.emplace(b.id, n).second) {
            throw Error(ErrorKind::InvalidNetwork, "duplicate " + bus_label(b.id));
        }
        if (!(b.v_min > 0.0 && b.v_min < b.v_max) || !finite(b.v_max)) {
            throw Error(ErrorKind::InvalidNetwork, bus_label(b.id) + ": need 0 < v_min < v_max");
        }
        if (!finite(b.shunt_conductance) || !finite(b.shunt_susceptance) || !finite(b.p_demand) ||
            !finite(b.q_demand)) {
            throw Error(ErrorKind::InvalidNetwork, bus_label(b.id) + ": non-finite value");
        }
        if (b.kind == BusKind::Reference) {
            ++references;
            reference_index_ = n;
        }
    }
    if (references == 0) throw Error(ErrorKind::NoReferenceBus, "no reference bus");
    if (references > 1) {
        throw Error(ErrorKind::InvalidNetwork, std::to_string(references) + " reference buses");
    }

    gen_bus_index_.reserve(generators_.size());
    for (std::size_t g = 0; g < generators_.size(); ++g) {
        const Generator& gen = generators_[g];
        const std::string label = "generator " + std::to_string(g + 1);
        if (!index_of_.contains(gen.bus_id)) {
            throw Error(ErrorKind::InvalidNetwork, label + " at unknown " + bus_label(gen.bus_id));
        }
        if (!(gen.p_min <= gen.p_max) || !(gen.q_min <= gen.q_max)) {
            throw Error(ErrorKind::InvalidNetwork, label + ": inverted limits");
        }
        if (!(gen.cost_quadratic >= 0.0)) {
            throw Error(ErrorKind::InvalidNetwork, label + ": negative quadratic cost");
        }
        gen_bus_index_.push_back(index_of_.at(gen.bus_id));
    }

    total_g_.resize(buses_.size());
    total_b_.resize(buses_.size());
    for (std::size_t n = 0; n < buses_.size(); ++n) {
        total_g_[n] = buses_[n].shunt_conductance;
        total_b_[n] = buses_[n].shunt_susceptance;
    }

    from_index_.reserve(branches_.size());
    to_index_.reserve(branches_.size());
    for (std::size_t l = 0; l < branches_.size(); ++l) {
        const BranchPi& br = branches_[l];
        if (!index_of_.contains(br.from_bus) || !index_of_.contains(br.to_bus)) {
            throw Error(ErrorKind::InvalidNetwork, branch_label(l, br) + ": unknown endpoint");
        }
        if (br.from_bus == br.to_bus) {
            throw Error(ErrorKind::InvalidNetwork, branch_label(l, br) + ": self loop");
        }
        if (br.resistance == 0.0 && br.reactance == 0.0) {
            throw Error(ErrorKind::InvalidNetwork, branch_label(l, br) + ": zero impedance");
        }
        if (!finite(br.resistance) || !finite(br.reactance) || !finite(br.shunt_conductance_s) ||
            !finite(br.shunt_conductance_r) || !finite(br.shunt_susceptance_s) ||
            !finite(br.shunt_susceptance_r)) {
            throw Error(ErrorKind::InvalidNetwork, branch_label(l, br) + ": non-finite parameter");
        }
        if (!(br.angle_min >= -kHalfPi && br.angle_min < br.angle_max && br.angle_max <= kHalfPi)) {
            throw Error(ErrorKind::InvalidNetwork,
                        branch_label(l, br) + ": need -pi/2 <= angle_min < angle_max <= pi/2");
        }
        if (br.ampacity_sq && !(*br.ampacity_sq > 0.0)) {
            throw Error(ErrorKind::InvalidNetwork, branch_label(l, br) + ": ampacity must be positive");
        }
        const std::size_t s = index_of_.at(br.from_bus);
        const std::size_t r = index_of_.at(br.to_bus);
        from_index_.push_back(s);
        to_index_.push_back(r);
        total_g_[s] += br.shunt_conductance_s;
        total_b_[s] += br.shunt_susceptance_s;
        total_g_[r] += br.shunt_conductance_r;
        total_b_[r] += br.shunt_susceptance_r;
    }

    // single connected component
    std::vector<std::vector<std::size_t>> adjacency(buses_.size());
    for (std::size_t l = 0; l < branches_.size(); ++l) {
        adjacency[from_index_[l]].push_back(to_index_[l]);
        adjacency[to_index_[l]].push_back(from_index_[l]);
    }
    std::vector<bool> seen(buses_.size(), false);
    std::queue<std::size_t> frontier;
    frontier.push(reference_index_);
    seen[reference_index_] = true;
    std::size_t reached = 1;
    while (!frontier.empty()) {
        const std::size_t n = frontier.front();
        frontier.pop();
        for (std::size_t m : adjacency[n]) {
            if (!seen[m]) {
                seen[m] = true;
                ++reached;
                frontier.push(m);
            }
        }
    }
    if (reached != buses_.size()) {
        throw Error(ErrorKind::DisconnectedNetwork,
                    std::to_string(buses_.size() - reached) + " bus(es) unreachable from the reference");
    }
}

std::size_t Network::bus_index(int id) const {
    auto it = index_of_.find(id);
    if (it == index_of_.end()) throw Error(ErrorKind::InvalidNetwork, "unknown " + bus_label(id));
    return it->second;
}

Incidence build_incidence(const Network& network) {
    const auto nb = static_cast<Eigen::Index>(network.num_buses());
    const auto nl = static_cast<Eigen::Index>(network.num_branches());
    std::vector<Eigen::Triplet<double>> plus;
    std::vector<Eigen::Triplet<double>> minus;
    plus.reserve(2 * network.num_branches());
    minus.reserve(network.num_branches());
    for (std::size_t l = 0; l < network.num_branches(); ++l) {
        const auto col = static_cast<Eigen::Index>(l);
        const auto s = static_cast<Eigen::Index>(network.from_index(l));
        const auto r = static_cast<Eigen::Index>(network.to_index(l));
        plus.emplace_back(s, col, 1.0);
        plus.emplace_back(r, col, -1.0);
        minus.emplace_back(r, col, -1.0);
    }
    Incidence inc;
    inc.a_plus.resize(nb, nl);
    inc.a_minus.resize(nb, nl);
    inc.a_plus.setFromTriplets(plus.begin(), plus.end());
    inc.a_minus.setFromTriplets(minus.begin(), minus.end());
    return inc;
}

}  // namespace meshflow
