#pragma once

#include <span>
#include <vector>

namespace meshflow {

struct Inertia {
    int positive = 0;
    int negative = 0;
    int zero = 0;
};

/// Sparse LDL^T of a symmetric indefinite matrix with 1x1 and 2x2 pivots.
///
/// Columns are visited in a fill-reducing (approximate minimum degree) order;
/// a pivot is accepted under the threshold test |a_pp| >= u max|a_ip|, else
/// tried as a 2x2 block with its largest neighbour, else delayed. A small u
/// keeps the fill low; callers raise it when solves lose accuracy. D gives
/// the inertia.
class SparseLdl {
public:
    struct Entry {
        int row;
        int col;
        double value;
    };

    explicit SparseLdl(double pivot_threshold = 1e-8) : threshold_(pivot_threshold) {}

    double pivot_threshold() const noexcept { return threshold_; }
    void set_pivot_threshold(double u) noexcept { threshold_ = u; }

    /// Factorizes the n x n matrix whose entries are given once per symmetric
    /// pair (either triangle; duplicates are summed). Returns false when a
    /// zero pivot was met; inertia() then counts it as zero.
    bool factorize(int n, std::span<const Entry> entries);

    Inertia inertia() const noexcept { return inertia_; }
    bool singular() const noexcept { return inertia_.zero > 0; }
    int size() const noexcept { return n_; }
    /// Off-diagonal entries stored in L.
    std::size_t factor_nonzeros() const noexcept;

    /// In-place solve with the factors.
    void solve(std::span<double> rhs) const;

    /// Solve followed by iterative refinement against the factored matrix.
    /// Returns the final infinity-norm residual.
    double solve_refined(std::span<double> rhs, int max_steps = 3) const;

    /// y = A x for the factored matrix.
    void multiply(std::span<const double> x, std::span<double> y) const;

private:
    struct Step {
        int p;
        int q;  // -1 for a 1x1 pivot
        double inv11, inv12, inv22;  // D^{-1}
        std::vector<int> index;
        std::vector<double> l1, l2;
    };

    double threshold_;
    int n_ = 0;
    Inertia inertia_;
    std::vector<Step> steps_;
    std::vector<Entry> matrix_;  // summed, both triangles folded to row >= col
};

}  // namespace meshflow
