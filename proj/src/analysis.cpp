#include "meshflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace meshflow {

namespace {

std::pair<double, std::size_t> max_of(const std::vector<double>& values) {
    double best = 0.0;
    std::size_t at = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k == 0 || values[k] > best) {
            best = values[k];
            at = k;
        }
    }
    return {best, at};
}

double min_of(const std::vector<double>& values) {
    return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
}

}  // namespace

double GapReport::gap_po_min() const { return min_of(gap_po); }
double GapReport::gap_qo_min() const { return min_of(gap_qo); }

GapReport compute_gaps(const OpfPoint& pt, const Network& net) {
    const std::size_t nl = net.num_branches();
    GapReport rep;
    rep.gap_po.resize(nl);
    rep.gap_qo.resize(nl);
    for (std::size_t l = 0; l < nl; ++l) {
        const BranchPi& br = net.branches()[l];
        const double p = pt.p_flow[l], q = pt.q_flow[l];
        const double current_sq = (p * p + q * q) / pt.v_sq[net.from_index(l)];
        rep.gap_po[l] = pt.p_loss[l] - current_sq * br.resistance;
        rep.gap_qo[l] = pt.q_loss[l] - current_sq * br.reactance;
    }
    std::tie(rep.gap_po_max, rep.argmax_po) = max_of(rep.gap_po);
    std::tie(rep.gap_qo_max, rep.argmax_qo) = max_of(rep.gap_qo);
    return rep;
}

GapReport compute_gaps(const ConstraintSystem& system, std::span<const double> solution,
                       const Network& network) {
    return compute_gaps(extract_point(system, network, solution), network);
}

int MeasurableFlows::violations() const {
    return static_cast<int>(std::count(violated.begin(), violated.end(), 1));
}

double delta_i_sq(double v_sq, double p, double q, double g, double b) {
    return -v_sq * b * b + 2.0 * q * b - v_sq * g * g - 2.0 * p * g;
}

MeasurableFlows measurable_flows(const OpfPoint& pt, const Network& net, double tolerance) {
    const std::size_t nl = net.num_branches();
    MeasurableFlows mf;
    for (auto* v : {&mf.p_tilde, &mf.q_tilde, &mf.i_tilde_sq, &mf.delta_i_sq, &mf.k_effective,
                    &mf.p_shunt, &mf.q_shunt}) {
        v->resize(nl);
    }
    mf.violated.assign(nl, 0);
    for (std::size_t l = 0; l < nl; ++l) {
        const BranchPi& br = net.branches()[l];
        const double V = pt.v_sq[net.from_index(l)];
        const double p = pt.p_flow[l], q = pt.q_flow[l];
        mf.p_shunt[l] = V * br.shunt_conductance_s;
        mf.q_shunt[l] = V * br.shunt_susceptance_s;
        mf.p_tilde[l] = p + mf.p_shunt[l];
        mf.q_tilde[l] = q - mf.q_shunt[l];
        mf.i_tilde_sq[l] = (mf.p_tilde[l] * mf.p_tilde[l] + mf.q_tilde[l] * mf.q_tilde[l]) / V;
        mf.delta_i_sq[l] = delta_i_sq(V, p, q, br.shunt_conductance_s, br.shunt_susceptance_s);
        if (br.ampacity_sq) {
            mf.k_effective[l] = *br.ampacity_sq + mf.delta_i_sq[l];
            mf.violated[l] = mf.i_tilde_sq[l] > *br.ampacity_sq + tolerance;
        } else {
            mf.k_effective[l] = std::numeric_limits<double>::infinity();
        }
    }
    return mf;
}

PhysicalSolution recover_solution(const OpfPoint& pt, const Network& net) {
    const std::size_t nb = net.num_buses();
    const std::size_t nl = net.num_branches();
    PhysicalSolution sol;
    sol.v.resize(nb);
    for (std::size_t n = 0; n < nb; ++n) sol.v[n] = std::sqrt(std::max(0.0, pt.v_sq[n]));
    sol.p_gen = pt.p_gen;
    sol.q_gen = pt.q_gen;
    sol.p_flow = pt.p_flow;
    sol.q_flow = pt.q_flow;

    std::vector<std::vector<std::size_t>> incident(nb);
    for (std::size_t l = 0; l < nl; ++l) {
        incident[net.from_index(l)].push_back(l);
        incident[net.to_index(l)].push_back(l);
    }
    std::vector<double> theta(nb, 0.0);
    std::vector<char> seen(nb, 0), tree(nl, 0);
    std::deque<std::size_t> queue{net.reference_index()};
    seen[net.reference_index()] = 1;
    while (!queue.empty()) {
        const std::size_t n = queue.front();
        queue.pop_front();
        for (std::size_t l : incident[n]) {
            const std::size_t s = net.from_index(l), r = net.to_index(l);
            const std::size_t other = n == s ? r : s;
            if (seen[other]) continue;
            theta[other] = n == s ? theta[s] - pt.theta_branch[l] : theta[r] + pt.theta_branch[l];
            seen[other] = 1;
            tree[l] = 1;
            queue.push_back(other);
        }
    }
    for (std::size_t l = 0; l < nl; ++l) {
        if (tree[l]) continue;
        const double r = theta[net.from_index(l)] - theta[net.to_index(l)] - pt.theta_branch[l];
        sol.cycle_closure = std::max(sol.cycle_closure, std::abs(r));
    }
    sol.theta = pt.family == Family::Exact && pt.theta.size() == nb ? pt.theta : theta;
    return sol;
}

std::vector<FormatResiduals> cross_format_residuals(std::span<const double> solution,
                                                    const Network& network, Family family,
                                                    std::span<const int> formats) {
    std::vector<FormatResiduals> out;
    for (int f : formats) {
        ModelSpec spec;
        spec.family = family;
        spec.equation_format = f;
        spec.ampacity_channel = AmpacityChannel::None;
        const ConstraintSystem sys = build_equations(network, spec);
        FormatResiduals res;
        res.format = f;
        for (const Row& row : sys.rows) {
            const double r = evaluate(row, solution);
            const double err = row.sense == Sense::Equal ? std::abs(r) : std::max(0.0, r);
            double& worst = res.worst[static_cast<std::size_t>(row.tag)];
            worst = std::max(worst, err);
            res.max = std::max(res.max, err);
        }
        out.push_back(res);
    }
    return out;
}

std::vector<std::vector<std::complex<double>>> admittance_matrix(const Network& net) {
    using C = std::complex<double>;
    const std::size_t nb = net.num_buses();
    std::vector<std::vector<C>> Y(nb, std::vector<C>(nb, C{}));
    for (std::size_t n = 0; n < nb; ++n) {
        const Bus& bus = net.buses()[n];
        Y[n][n] += C(bus.shunt_conductance, bus.shunt_susceptance);
    }
    for (std::size_t l = 0; l < net.num_branches(); ++l) {
        const BranchPi& br = net.branches()[l];
        const std::size_t s = net.from_index(l), r = net.to_index(l);
        const C y = 1.0 / C(br.resistance, br.reactance);
        Y[s][s] += y + C(br.shunt_conductance_s, br.shunt_susceptance_s);
        Y[r][r] += y + C(br.shunt_conductance_r, br.shunt_susceptance_r);
        Y[s][r] -= y;
        Y[r][s] -= y;
    }
    return Y;
}

YbusReport ybus_oracle(const PhysicalSolution& sol, const Network& net) {
    using C = std::complex<double>;
    const std::size_t nb = net.num_buses();
    const auto Y = admittance_matrix(net);
    std::vector<C> V(nb);
    for (std::size_t n = 0; n < nb; ++n) V[n] = std::polar(sol.v[n], sol.theta[n]);

    std::vector<C> net_injection(nb);
    for (std::size_t n = 0; n < nb; ++n) {
        net_injection[n] = -C(net.buses()[n].p_demand, net.buses()[n].q_demand);
    }
    for (std::size_t g = 0; g < net.num_generators(); ++g) {
        net_injection[net.gen_bus_index(g)] += C(sol.p_gen[g], sol.q_gen[g]);
    }

    YbusReport rep;
    rep.mismatch.resize(nb);
    for (std::size_t n = 0; n < nb; ++n) {
        C current{};
        for (std::size_t k = 0; k < nb; ++k) current += Y[n][k] * V[k];
        rep.mismatch[n] = std::abs(V[n] * std::conj(current) - net_injection[n]);
    }
    std::tie(rep.max, rep.argmax) = max_of(rep.mismatch);
    return rep;
}

}  // namespace meshflow
