#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlopt
{

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

/* Thrown on malformed problem data (dimension mismatch, non-finite input,
 * indefinite objective). Distinct from solver non-convergence, which is a
 * status, not an exception. */
class ProblemError : public std::runtime_error
{
public:
    explicit ProblemError(const std::string& what) : std::runtime_error(what) {}
};

enum class ConeType
{
    Zero,   // Ax = b rows
    NonNeg, // Ax <= b rows
    Soc     // ||(b - Ax)[1:]|| <= (b - Ax)[0]
};

struct ConeSegment
{
    ConeType type;
    int dim;
};

/**
 * Conic program
 *
 *   minimize    (1/2) x'Px + q'x + obj_const
 *   subject to  Ax + s = b,  s in K
 *
 * where K is the product of the cone segments in order. P must be symmetric
 * positive semidefinite; it is certified by factorization when the solver
 * loads the problem.
 */
struct ConeProgram
{
    int n = 0;
    SpMat P;  // n x n, may be empty (interpreted as zero)
    Vec q;    // n
    SpMat A;  // m x n
    Vec b;    // m
    std::vector<ConeSegment> cones;
    double obj_const = 0.0;

    int rows() const { return static_cast<int>(b.size()); }

    int cone_dim_sum() const
    {
        int s = 0;
        for (const auto& c : cones)
            s += c.dim;
        return s;
    }

    /* Throws ProblemError if the type invariants fail. */
    void validate() const;

    double objective_value(const Vec& x) const;
};

enum class SolveStatus
{
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIters
};

std::string to_string(SolveStatus s);

struct ConeSolution
{
    SolveStatus status = SolveStatus::MaxIters;
    Vec x;
    Vec y; // dual multipliers, one per row, in the row order of the program
    Vec s; // slacks, zero on Zero-cone rows
    double objective = 0.0;
    int iterations = 0;
    double res_primal = 0.0;
    double res_dual = 0.0;
    double res_gap = 0.0;
    /* Farkas-type certificate: a dual ray for PrimalInfeasible (A'y = 0,
     * y in K*, b'y < 0, normalized to b'y = -1), a primal ray for
     * DualInfeasible (Ax + s = 0, s in K, q'x = -1). */
    Vec certificate;
};

/**
 * Recomputes the KKT residuals of `sol` for `prob` from scratch:
 *   primal = ||Ax + s - b||_inf
 *   dual   = ||Px + q + A'y||_inf
 *   gap    = |s'y| / max(1, |primal obj|, |dual obj|)
 */
struct Residuals
{
    double primal;
    double dual;
    double gap;
};

Residuals kkt_residuals(const ConeProgram& prob, const ConeSolution& sol);

/* JSON interchange format used by the golden tests; see README for the schema. */
std::string to_json(const ConeProgram& prob);
ConeProgram cone_program_from_json(const std::string& text);

} // namespace mlopt
