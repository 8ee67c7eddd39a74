#pragma once

#include <Eigen/SparseCholesky>
#include <memory>

#include "mlopt/cone_program.hpp"

namespace mlopt
{

struct SolverOptions
{
    /* Absolute infinity-norm bound on primal/dual residuals and relative
     * bound on the complementarity gap required for an Optimal status. */
    double tolerance = 1e-8;
    int max_iters = 100;
    /* Static regularization of the KKT system. Keeps the LDL' factorization
     * alive on rank-deficient constraint blocks (the grasp wrench rows). */
    double static_reg = 1e-9;
    int equil_iters = 3;
    int refine_iters = 3;
    bool verbose = false;
};

/**
 * Homogeneous self-dual interior-point solver for cone programs over zero,
 * nonnegative and second-order cones with Nesterov-Todd scaling and Mehrotra
 * predictor-corrector steps. Quadratic objectives are reduced to an epigraph
 * second-order cone internally.
 *
 * A solver instance is single-threaded and holds no global state. setup()
 * fixes the problem structure; update_b() swaps the constraint offsets
 * without re-doing the symbolic work, which is what branch-and-bound needs
 * when only the bound rows change between nodes.
 */
class ConicSolver
{
public:
    ConicSolver();
    ~ConicSolver();
    ConicSolver(ConicSolver&&) noexcept;
    ConicSolver& operator=(ConicSolver&&) noexcept;

    void setup(const ConeProgram& prob, const SolverOptions& opts = SolverOptions{});

    /* Replaces b (same dimensions/cones). Requires a prior setup(). */
    void update_b(const Vec& b);

    ConeSolution solve();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/* One-shot convenience wrapper. Deterministic: identical inputs produce
 * bitwise-identical outputs. */
ConeSolution solve_cone_program(const ConeProgram& prob,
                                const SolverOptions& opts = SolverOptions{});

} // namespace mlopt
