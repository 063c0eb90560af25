#include "meshflow/sparse_ldl.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

namespace meshflow {

namespace {

// Active (not yet eliminated) part of the matrix, stored symmetrically:
// row i lists every off-diagonal neighbour j with a_ij.
struct ActiveMatrix {
    std::vector<double> diag;
    std::vector<std::vector<int>> cols;
    std::vector<std::vector<double>> vals;
    std::vector<int> scatter;  // -1 or position of column in the row being updated

    explicit ActiveMatrix(int n) : diag(n, 0.0), cols(n), vals(n), scatter(n, -1) {}

    double row_max(int i, int skip = -1) const {
        double m = 0.0;
        for (std::size_t k = 0; k < cols[i].size(); ++k) {
            if (cols[i][k] != skip) m = std::max(m, std::abs(vals[i][k]));
        }
        return m;
    }

    double get(int i, int j) const {
        for (std::size_t k = 0; k < cols[i].size(); ++k) {
            if (cols[i][k] == j) return vals[i][k];
        }
        return 0.0;
    }

    void remove(int i, int j) {
        auto& c = cols[i];
        for (std::size_t k = 0; k < c.size(); ++k) {
            if (c[k] == j) {
                c[k] = c.back();
                c.pop_back();
                vals[i][k] = vals[i].back();
                vals[i].pop_back();
                return;
            }
        }
    }

    // a_ij -= u_i . v_j for every pair in `set`, where update(i, j) supplies the product
    template <class Product>
    void rank_update(const std::vector<int>& set, Product product) {
        for (std::size_t a = 0; a < set.size(); ++a) {
            const int i = set[a];
            auto& c = cols[i];
            auto& v = vals[i];
            for (std::size_t k = 0; k < c.size(); ++k) scatter[c[k]] = static_cast<int>(k);
            diag[i] -= product(a, a);
            for (std::size_t b = 0; b < set.size(); ++b) {
                if (b == a) continue;
                const int j = set[b];
                const double delta = product(a, b);
                if (scatter[j] >= 0) {
                    v[scatter[j]] -= delta;
                } else {
                    scatter[j] = static_cast<int>(c.size());
                    c.push_back(j);
                    v.push_back(-delta);
                }
            }
            for (int j : c) scatter[j] = -1;
        }
    }
};

void count_block(Inertia& inertia, double a, double b, double d) {
    const double det = a * d - b * b;
    if (det < 0.0) {
        ++inertia.positive;
        ++inertia.negative;
    } else if (a + d > 0.0) {
        inertia.positive += 2;
    } else {
        inertia.negative += 2;
    }
}

std::vector<int> fill_order(int n, const std::vector<SparseLdl::Entry>& lower) {
    std::vector<Eigen::Triplet<double>> pattern;
    pattern.reserve(2 * lower.size() + n);
    for (const auto& e : lower) {
        pattern.emplace_back(e.row, e.col, 1.0);
        if (e.row != e.col) pattern.emplace_back(e.col, e.row, 1.0);
    }
    for (int i = 0; i < n; ++i) pattern.emplace_back(i, i, 1.0);
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(pattern.begin(), pattern.end());
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
    Eigen::AMDOrdering<int>()(a, perm);
    return {perm.indices().data(), perm.indices().data() + n};
}

}  // namespace

bool SparseLdl::factorize(int n, std::span<const Entry> entries) {
    n_ = n;
    inertia_ = {};
    steps_.clear();

    std::map<std::pair<int, int>, double> summed;
    for (const Entry& e : entries) {
        const int r = std::max(e.row, e.col), c = std::min(e.row, e.col);
        summed[{r, c}] += e.value;
    }
    matrix_.clear();
    matrix_.reserve(summed.size());
    ActiveMatrix a(n);
    for (const auto& [rc, v] : summed) {
        matrix_.push_back({rc.first, rc.second, v});
        if (rc.first == rc.second) {
            a.diag[rc.first] += v;
        } else {
            a.cols[rc.first].push_back(rc.second);
            a.vals[rc.first].push_back(v);
            a.cols[rc.second].push_back(rc.first);
            a.vals[rc.second].push_back(v);
        }
    }
    const double tiny = 1e-20;  // absolute: regularization terms may be far below the matrix scale
    const double u = threshold_;

    std::vector<char> done(n, 0);
    int remaining = n;
    bool ok = true;

    auto eliminate_one = [&](int p) {
        Step st{p, -1, 0.0, 0.0, 0.0, {}, {}, {}};
        const double d = a.diag[p];
        if (std::abs(d) <= tiny) {
            ++inertia_.zero;
            ok = false;
            st.inv11 = 0.0;
        } else {
            st.inv11 = 1.0 / d;
            (d > 0.0 ? inertia_.positive : inertia_.negative) += 1;
        }
        st.index = a.cols[p];
        const std::vector<double> col = a.vals[p];
        st.l1.resize(col.size());
        for (std::size_t k = 0; k < col.size(); ++k) st.l1[k] = col[k] * st.inv11;
        for (int i : st.index) a.remove(i, p);
        a.rank_update(st.index, [&](std::size_t x, std::size_t y) { return st.l1[x] * col[y]; });
        done[p] = 1;
        --remaining;
        steps_.push_back(std::move(st));
    };

    auto eliminate_two = [&](int p, int q) {
        const double app = a.diag[p], aqq = a.diag[q], apq = a.get(p, q);
        const double det = app * aqq - apq * apq;
        Step st{p, q, aqq / det, -apq / det, app / det, {}, {}, {}};
        count_block(inertia_, app, apq, aqq);

        // union of neighbours, excluding the pivots
        std::vector<int>& set = st.index;
        std::vector<double> bp, bq;
        for (std::size_t k = 0; k < a.cols[p].size(); ++k) {
            const int j = a.cols[p][k];
            if (j == q) continue;
            a.scatter[j] = static_cast<int>(set.size());
            set.push_back(j);
            bp.push_back(a.vals[p][k]);
            bq.push_back(0.0);
        }
        for (std::size_t k = 0; k < a.cols[q].size(); ++k) {
            const int j = a.cols[q][k];
            if (j == p) continue;
            if (a.scatter[j] >= 0) {
                bq[a.scatter[j]] = a.vals[q][k];
            } else {
                a.scatter[j] = static_cast<int>(set.size());
                set.push_back(j);
                bp.push_back(0.0);
                bq.push_back(a.vals[q][k]);
            }
        }
        for (int j : set) a.scatter[j] = -1;

        st.l1.resize(set.size());
        st.l2.resize(set.size());
        for (std::size_t k = 0; k < set.size(); ++k) {
            st.l1[k] = bp[k] * st.inv11 + bq[k] * st.inv12;
            st.l2[k] = bp[k] * st.inv12 + bq[k] * st.inv22;
        }
        for (int i : set) {
            a.remove(i, p);
            a.remove(i, q);
        }
        a.rank_update(set, [&](std::size_t x, std::size_t y) { return st.l1[x] * bp[y] + st.l2[x] * bq[y]; });
        done[p] = done[q] = 1;
        remaining -= 2;
        steps_.push_back(std::move(st));
    };

    // Tries pivot p. Returns 1 / 2 for an accepted pivot size, 0 otherwise;
    // `score` receives a stability measure for the fallback choice.
    auto try_pivot = [&](int p, int& partner, double& score) -> int {
        const double app = a.diag[p];
        double gamma = 0.0;
        int q = -1;
        for (std::size_t k = 0; k < a.cols[p].size(); ++k) {
            const double v = std::abs(a.vals[p][k]);
            if (v > gamma) {
                gamma = v;
                q = a.cols[p][k];
            }
        }
        if (gamma == 0.0) {
            score = std::abs(app) > tiny ? 1.0 : 0.0;
            return 1;  // isolated: nothing to lose, zero pivots are counted
        }
        const double s1 = std::abs(app) / gamma;
        if (s1 >= u && std::abs(app) > tiny) {
            score = s1;
            return 1;
        }
        const double aqq = a.diag[q], apq = a.get(p, q);
        const double det = app * aqq - apq * apq;
        double s2 = 0.0;
        if (std::abs(det) > tiny * gamma) {
            const double gp = a.row_max(p, q), gq = a.row_max(q, p);
            const double t1 = (std::abs(aqq) * gp + std::abs(apq) * gq) / std::abs(det);
            const double t2 = (std::abs(apq) * gp + std::abs(app) * gq) / std::abs(det);
            const double growth = std::max(t1, t2);
            s2 = growth > 0.0 ? 1.0 / growth : 1e300;
            // guard against a well-conditioned-looking block built from tiny entries
            if (std::abs(apq) < tiny && std::abs(app) <= tiny) s2 = 0.0;
        }
        partner = q;
        if (s2 >= u) {
            score = s2;
            return 2;
        }
        score = std::max(s1, s2);
        return s2 > s1 ? -2 : -1;
    };

    // Fill-reducing order from the pattern; numerical pivoting walks it and
    // delays a pivot that fails the threshold test until it becomes acceptable.
    const std::vector<int> order = fill_order(n, matrix_);
    constexpr int kLookahead = 16;
    std::size_t head = 0;
    while (remaining > 0) {
        while (done[order[head]]) ++head;
        int best = -1, best_partner = -1, best_size = 1;
        double best_score = -1.0;
        bool taken = false;
        int tried = 0;
        for (std::size_t k = head; k < order.size() && tried < kLookahead; ++k) {
            const int p = order[k];
            if (done[p]) continue;
            ++tried;
            int partner = -1;
            double score = 0.0;
            const int kind = try_pivot(p, partner, score);
            if (kind == 1) {
                eliminate_one(p);
                taken = true;
                break;
            }
            if (kind == 2) {
                eliminate_two(p, partner);
                taken = true;
                break;
            }
            if (score > best_score) {
                best_score = score;
                best = p;
                best_partner = partner;
                best_size = kind == -2 ? 2 : 1;
            }
        }
        if (taken) continue;
        if (best_size == 2) eliminate_two(best, best_partner);
        else eliminate_one(best);
    }
    return ok;
}

std::size_t SparseLdl::factor_nonzeros() const noexcept {
    std::size_t total = 0;
    for (const Step& st : steps_) total += st.index.size() * (st.q < 0 ? 1 : 2) + (st.q < 0 ? 0 : 1);
    return total;
}

void SparseLdl::solve(std::span<double> y) const {
    for (const Step& st : steps_) {
        const double yp = y[st.p];
        if (st.q < 0) {
            for (std::size_t k = 0; k < st.index.size(); ++k) y[st.index[k]] -= st.l1[k] * yp;
        } else {
            const double yq = y[st.q];
            for (std::size_t k = 0; k < st.index.size(); ++k) {
                y[st.index[k]] -= st.l1[k] * yp + st.l2[k] * yq;
            }
        }
    }
    for (const Step& st : steps_) {
        if (st.q < 0) {
            y[st.p] *= st.inv11;
        } else {
            const double yp = y[st.p], yq = y[st.q];
            y[st.p] = st.inv11 * yp + st.inv12 * yq;
            y[st.q] = st.inv12 * yp + st.inv22 * yq;
        }
    }
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        const Step& st = *it;
        double sp = 0.0, sq = 0.0;
        for (std::size_t k = 0; k < st.index.size(); ++k) {
            const double xi = y[st.index[k]];
            sp += st.l1[k] * xi;
            if (st.q >= 0) sq += st.l2[k] * xi;
        }
        y[st.p] -= sp;
        if (st.q >= 0) y[st.q] -= sq;
    }
}

void SparseLdl::multiply(std::span<const double> x, std::span<double> y) const {
    std::fill(y.begin(), y.end(), 0.0);
    for (const Entry& e : matrix_) {
        y[e.row] += e.value * x[e.col];
        if (e.row != e.col) y[e.col] += e.value * x[e.row];
    }
}

double SparseLdl::solve_refined(std::span<double> rhs, int max_steps) const {
    const std::vector<double> b(rhs.begin(), rhs.end());
    solve(rhs);
    std::vector<double> r(b.size()), ax(b.size());
    double previous = HUGE_VAL;
    double norm = 0.0;
    for (int step = 0;; ++step) {
        multiply(rhs, ax);
        norm = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            r[i] = b[i] - ax[i];
            norm = std::max(norm, std::abs(r[i]));
        }
        if (step >= max_steps || norm == 0.0 || norm > 0.5 * previous) break;
        previous = norm;
        solve(r);
        for (std::size_t i = 0; i < b.size(); ++i) rhs[i] += r[i];
    }
    return norm;
}

}  // namespace meshflow
