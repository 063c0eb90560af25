#include <cmath>
#include <complex>
#include <random>

#include <gtest/gtest.h>

#include "meshflow/analysis.hpp"
#include "meshflow/ipm.hpp"
#include "support.hpp"

using namespace meshflow;
using C = std::complex<double>;

namespace {

struct Solved {
    ConstraintSystem sys;
    SolverResult result;
    OpfPoint point;
};

Solved solve_format(const Network& net, Family family, int table_format, double xi = 0.0) {
    Solved s{build_opf(net, ModelSpec::from_table_format(family, table_format, true, xi)), {}, {}};
    s.result = solve(s.sys);
    s.point = extract_point(s.sys, net, s.result.primal);
    return s;
}

// Buses 1-2-3 in a chain, sending ends at the lower number, reference at 1.
Network chain(bool close_loop) {
    std::vector<Bus> buses(3);
    for (int k = 0; k < 3; ++k) buses[k].id = k + 1;
    buses[0].kind = BusKind::Reference;
    std::vector<BranchPi> branches;
    for (auto [s, r] : std::vector<std::pair<int, int>>{{1, 2}, {2, 3}, {1, 3}}) {
        if (!close_loop && s == 1 && r == 3) continue;
        BranchPi br;
        br.from_bus = s;
        br.to_bus = r;
        br.resistance = 0.01;
        br.reactance = 0.1;
        branches.push_back(br);
    }
    Generator g;
    g.bus_id = 1;
    g.p_max = 1.0;
    return Network(100.0, buses, {g}, branches);
}

OpfPoint zero_point(const Network& net, Family family) {
    OpfPoint pt;
    pt.family = family;
    pt.v.assign(net.num_buses(), 1.0);
    pt.v_sq.assign(net.num_buses(), 1.0);
    pt.theta.assign(net.num_buses(), 0.0);
    for (auto* v : {&pt.p_flow, &pt.q_flow, &pt.p_loss, &pt.q_loss, &pt.theta_branch}) v->assign(net.num_branches(), 0.0);
    pt.p_gen.assign(net.num_generators(), 0.0);
    pt.q_gen.assign(net.num_generators(), 0.0);
    return pt;
}

}  // namespace

TEST(Gaps, ZeroFlowsGiveZeroGaps) {
    const Network net = test::load_case("case9");
    const GapReport g = compute_gaps(zero_point(net, Family::Approximate), net);
    EXPECT_EQ(g.gap_po_max, 0.0);
    EXPECT_EQ(g.gap_qo_max, 0.0);
    EXPECT_EQ(g.gap_po.size(), 9u);
}

TEST(Gaps, HandValues) {
    const Network net = chain(false);
    OpfPoint pt = zero_point(net, Family::Approximate);
    pt.v_sq = {1.0, 0.98, 0.97};
    pt.p_flow = {0.3, 0.1};
    pt.q_flow = {0.4, 0.0};
    pt.p_loss = {0.01, 0.0002};
    pt.q_loss = {0.1, 0.0011};
    const GapReport g = compute_gaps(pt, net);
    // (0.09 + 0.16) / 1.0 = 0.25; (0.01) / 0.98
    EXPECT_NEAR(g.gap_po[0], 0.01 - 0.25 * 0.01, 1e-15);
    EXPECT_NEAR(g.gap_qo[0], 0.1 - 0.25 * 0.1, 1e-15);
    EXPECT_NEAR(g.gap_qo[1], 0.0011 - 0.01 / 0.98 * 0.1, 1e-15);
    EXPECT_EQ(g.argmax_qo, 0u);
    EXPECT_EQ(g.gap_qo_max, g.gap_qo[0]);
    EXPECT_EQ(g.gap_po_min(), std::min(g.gap_po[0], g.gap_po[1]));
}

TEST(Gaps, Case9ApproximateFormat1) {
    const Network net = test::load_case("case9");
    const Solved s = solve_format(net, Family::Approximate, 1);
    ASSERT_EQ(s.result.status, SolverStatus::Optimal);
    const GapReport g = compute_gaps(s.sys, s.result.primal, net);
    EXPECT_LE(g.gap_po_max, 1e-9);
    EXPECT_NEAR(g.gap_qo_max, 0.332, 0.332 * 0.02);
}

TEST(Gaps, NonnegativeWhereTheConeIsPresent) {
    for (const char* name : {"case9", "case14", "case30"}) {
        const Network net = test::load_case(name);
        for (int t = 1; t <= 12; ++t) {
            const Solved s = solve_format(net, Family::Approximate, t);
            ASSERT_EQ(s.result.status, SolverStatus::Optimal);
            const GapReport g = compute_gaps(s.point, net);
            const int f = (t - 1) % 6;  // 0, 3: both cones; 1, 4: active; 2, 5: reactive
            if (f % 3 != 2) {
                EXPECT_GE(g.gap_po_min(), -1e-7) << name << " " << t;
            }
            if (f % 3 != 1) {
                EXPECT_GE(g.gap_qo_min(), -1e-7) << name << " " << t;
            }
        }
    }
}

TEST(Gaps, PenaltyShrinksReactiveGap) {
    for (const char* name : {"case9", "case14", "case30"}) {
        const Network net = test::load_case(name);
        for (int t = 1; t <= 12; ++t) {
            const Solved plain = solve_format(net, Family::Approximate, t);
            const Solved pen = solve_format(net, Family::Approximate, t, 0.3);
            ASSERT_EQ(plain.result.status, SolverStatus::Optimal);
            ASSERT_EQ(pen.result.status, SolverStatus::Optimal);
            const double before = compute_gaps(plain.point, net).gap_qo_max;
            const double after = compute_gaps(pen.point, net).gap_qo_max;
            EXPECT_LE(after, 1e-4 * std::max(before, 0.0)) << name << " " << t << ": " << before << " -> " << after;
        }
    }
}

TEST(MeasurableFlows, HandEvaluatedDelta) {
    EXPECT_NEAR(delta_i_sq(1.0, 0.0, 0.5, 0.0, 0.1), 0.09, 1e-15);
    EXPECT_EQ(delta_i_sq(1.03, 0.7, -0.2, 0.0, 0.0), 0.0);
}

TEST(MeasurableFlows, NoShuntMeansMeasuredEqualsSeries) {
    const Network net = chain(false);
    OpfPoint pt = zero_point(net, Family::Exact);
    pt.p_flow = {0.4, 0.2};
    pt.q_flow = {0.1, -0.05};
    pt.v_sq = {1.0, 0.99, 0.98};
    const MeasurableFlows mf = measurable_flows(pt, net);
    for (std::size_t l = 0; l < 2; ++l) {
        EXPECT_EQ(mf.p_tilde[l], pt.p_flow[l]);
        EXPECT_EQ(mf.q_tilde[l], pt.q_flow[l]);
        EXPECT_EQ(mf.delta_i_sq[l], 0.0);
        EXPECT_TRUE(std::isinf(mf.k_effective[l]));
    }
    EXPECT_EQ(mf.violations(), 0);
}

TEST(MeasurableFlows, DeltaMatchesPhasorCurrents) {
    // series current and shunt current as phasors; the terminal current is their sum
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        const C vs = std::polar(1.0 + 0.08 * u(rng), 0.3 * u(rng));
        const C is(u(rng), u(rng));
        const double G = 0.05 * std::abs(u(rng)), B = 0.3 * u(rng);
        const C terminal = is + C(G, B) * vs;
        const C s = vs * std::conj(is);
        const double V = std::norm(vs);
        const double oracle = std::norm(is) - std::norm(terminal);
        EXPECT_NEAR(delta_i_sq(V, s.real(), s.imag(), G, B), oracle, 1e-12);

        // measured quantities of a one-branch network at that point
        const C measured = vs * std::conj(terminal);
        const double p_tilde = s.real() + V * G, q_tilde = s.imag() - V * B;
        EXPECT_NEAR(p_tilde, measured.real(), 1e-12);
        EXPECT_NEAR(q_tilde, measured.imag(), 1e-12);
        EXPECT_NEAR((p_tilde * p_tilde + q_tilde * q_tilde) / V, std::norm(terminal), 1e-12);
    }
}

TEST(MeasurableFlows, FlagsOverloadedTerminal) {
    const Network base = chain(false);
    std::vector<BranchPi> branches = base.branches();
    branches[0].ampacity_sq = 0.25;
    branches[0].shunt_susceptance_s = 0.1;
    const Network net(base.base_mva(), base.buses(), base.generators(), branches);
    OpfPoint pt = zero_point(net, Family::Exact);
    pt.p_flow = {0.0, 0.0};
    pt.q_flow = {0.5, 0.0};
    MeasurableFlows mf = measurable_flows(pt, net);
    // q~ = 0.5 - 0.1 = 0.4, i~^2 = 0.16 < 0.25
    EXPECT_NEAR(mf.i_tilde_sq[0], 0.16, 1e-15);
    EXPECT_NEAR(mf.delta_i_sq[0], 0.09, 1e-15);
    EXPECT_NEAR(mf.k_effective[0], 0.34, 1e-15);
    EXPECT_NEAR(mf.q_shunt[0], 0.1, 1e-15);
    EXPECT_EQ(mf.violations(), 0);
    pt.p_flow[0] = 0.4;  // i~^2 = 0.32
    mf = measurable_flows(pt, net);
    EXPECT_EQ(mf.violated[0], 1);
    EXPECT_EQ(mf.violations(), 1);
}

TEST(Recover, RadialChainTelescopes) {
    const Network net = chain(false);
    OpfPoint pt = zero_point(net, Family::Approximate);
    pt.v_sq = {1.0, 1.0, 0.9801};
    pt.theta_branch = {0.02, -0.01};
    const PhysicalSolution sol = recover_solution(pt, net);
    EXPECT_EQ(sol.v[0], 1.0);
    EXPECT_NEAR(sol.v[2], 0.99, 1e-15);
    EXPECT_EQ(sol.theta[0], 0.0);
    EXPECT_NEAR(sol.theta[1], -0.02, 1e-15);
    EXPECT_NEAR(sol.theta[2], -0.01, 1e-15);
    EXPECT_EQ(sol.cycle_closure, 0.0);
}

TEST(Recover, CycleClosureReportedNotFixed) {
    const Network net = chain(true);
    OpfPoint pt = zero_point(net, Family::Approximate);
    pt.theta_branch = {0.02, -0.01, 0.01};  // consistent: 0.02 + (-0.01) = 0.01
    EXPECT_NEAR(recover_solution(pt, net).cycle_closure, 0.0, 1e-15);
    pt.theta_branch[2] = 0.05;
    EXPECT_NEAR(recover_solution(pt, net).cycle_closure, 0.04, 1e-15);
}

TEST(Recover, ExactSolutionsPassThrough) {
    const Network net = test::load_case("case14");
    const Solved s = solve_format(net, Family::Exact, 4);
    ASSERT_EQ(s.result.status, SolverStatus::Optimal);
    const PhysicalSolution sol = recover_solution(s.point, net);
    for (std::size_t n = 0; n < net.num_buses(); ++n) {
        EXPECT_NEAR(sol.v[n], s.point.v[n], 1e-15);
        EXPECT_EQ(sol.theta[n], s.point.theta[n]);
    }
    EXPECT_LT(sol.cycle_closure, 1e-12);
}

TEST(CrossFormat, ExactOptimumSatisfiesEveryFormat) {
    const Network net = test::load_case("case9");
    const Solved s = solve_format(net, Family::Exact, 1);
    ASSERT_EQ(s.result.status, SolverStatus::Optimal);
    const std::vector<int> formats{1, 2, 3, 4, 5, 6};
    for (const FormatResiduals& r : cross_format_residuals(s.result.primal, net, Family::Exact, formats)) {
        EXPECT_LE(r.max, r.format == 1 ? 1e-8 : 1e-6) << "format " << r.format;
    }

    // v_1 += 0.01 breaks the voltage-drop rows of every branch at bus 1
    std::vector<double> bumped = s.result.primal;
    bumped[s.sys.layout.bus_voltage[net.bus_index(1)]] += 0.01;
    const std::vector<int> one{1};
    const FormatResiduals r = cross_format_residuals(bumped, net, Family::Exact, one).front();
    EXPECT_GT(r.max, 1e-4);
    EXPECT_GT(r.worst[static_cast<std::size_t>(FormTag::SqDrop)], 1e-4);
}

TEST(Ybus, LosslessNoLoadFlatCase) {
    std::vector<Bus> buses(2);
    buses[0].id = 1;
    buses[0].kind = BusKind::Reference;
    buses[1].id = 2;
    BranchPi br;
    br.from_bus = 1;
    br.to_bus = 2;
    br.reactance = 0.1;
    Generator g;
    g.bus_id = 1;
    g.p_max = 1.0;
    const Network net(100.0, buses, {g}, {br});
    const YbusReport rep = ybus_oracle(recover_solution(zero_point(net, Family::Exact), net), net);
    EXPECT_EQ(rep.max, 0.0);
}

TEST(Ybus, AdmittanceMatrixStructure) {
    const Network net = test::load_case("case14");
    const auto Y = admittance_matrix(net);
    for (std::size_t i = 0; i < net.num_buses(); ++i) {
        C row_sum{};
        for (std::size_t k = 0; k < net.num_buses(); ++k) {
            EXPECT_EQ(Y[i][k], Y[k][i]);  // no phase shifters: symmetric
            row_sum += Y[i][k];
        }
        // row sums leave only the shunt admittance at the bus
        EXPECT_NEAR(row_sum.real(), net.total_shunt_conductance(i), 1e-9);
        EXPECT_NEAR(row_sum.imag(), net.total_shunt_susceptance(i), 1e-9);
    }
}

TEST(Ybus, Case9Optima) {
    const Network net = test::load_case("case9");
    const Solved exact = solve_format(net, Family::Exact, 1);
    ASSERT_EQ(exact.result.status, SolverStatus::Optimal);
    EXPECT_LE(ybus_oracle(recover_solution(exact.point, net), net).max, 1e-6);

    // The linearized drop rows omit the v_s v_r sin() factor, so phasors
    // rebuilt from a relaxed optimum do not solve the AC equations: the
    // oracle must report that error, not hide it. Observed: 0.279 p.u. at
    // bus 2, 0.277 with the reactive gap closed (xi = 0.3).
    for (double xi : {0.0, 0.3}) {
        const Solved approx = solve_format(net, Family::Approximate, 1, xi);
        ASSERT_EQ(approx.result.status, SolverStatus::Optimal);
        const YbusReport rep = ybus_oracle(recover_solution(approx.point, net), net);
        EXPECT_GT(rep.max, 1e-2) << xi;
        EXPECT_LT(rep.max, 0.5) << xi;
    }
}
