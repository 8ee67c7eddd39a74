#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlopt/rng.hpp"
#include "mlopt/solver.hpp"

#include <Eigen/Dense>

using namespace mlopt;

namespace
{

SpMat sparse(const Eigen::MatrixXd& d)
{
    return d.sparseView().pruned(0.0, 0.0);
}

ConeProgram lp1d()
{
    // minimize x subject to x >= 0
    ConeProgram p;
    p.n = 1;
    p.q = Vec::Constant(1, 1.0);
    Eigen::MatrixXd A(1, 1);
    A << -1.0;
    p.A = sparse(A);
    p.b = Vec::Zero(1);
    p.cones = {{ConeType::NonNeg, 1}};
    return p;
}

ConeProgram norm_socp()
{
    // minimize t subject to ||(3,4)|| <= t
    ConeProgram p;
    p.n = 1;
    p.q = Vec::Constant(1, 1.0);
    Eigen::MatrixXd A(3, 1);
    A << -1.0, 0.0, 0.0;
    p.A = sparse(A);
    p.b = Vec(3);
    p.b << 0.0, 3.0, 4.0;
    p.cones = {{ConeType::Soc, 3}};
    return p;
}

/* Checks the per-segment cone membership of s and y. */
void check_cone_membership(const ConeProgram& p, const ConeSolution& sol, double tol)
{
    int row = 0;
    for (const auto& seg : p.cones)
    {
        if (seg.type == ConeType::Zero)
        {
            for (int k = 0; k < seg.dim; k++)
                CHECK(std::fabs(sol.s(row + k)) <= tol);
        }
        else if (seg.type == ConeType::NonNeg)
        {
            for (int k = 0; k < seg.dim; k++)
            {
                CHECK(sol.s(row + k) >= -tol);
                CHECK(sol.y(row + k) >= -tol);
            }
        }
        else
        {
            CHECK(sol.s(row) >= sol.s.segment(row + 1, seg.dim - 1).norm() - tol);
            CHECK(sol.y(row) >= sol.y.segment(row + 1, seg.dim - 1).norm() - tol);
        }
        row += seg.dim;
    }
}

} // namespace

TEST_CASE("nonnegative cone boundary")
{
    const ConeSolution sol = solve_cone_program(lp1d());
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(std::fabs(sol.x(0)) <= 1e-8);
    CHECK(std::fabs(sol.objective) <= 1e-8);
}

TEST_CASE("euclidean norm epigraph")
{
    const ConeSolution sol = solve_cone_program(norm_socp());
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.x(0) == doctest::Approx(5.0).epsilon(1e-7));
}

TEST_CASE("random feasible QPs recover KKT back-constructed optima")
{
    // Oracle: sample x*, an active set, and multipliers, then back-solve q so
    // that (x*, y*) satisfies the KKT system exactly. P is positive definite,
    // so x* is the unique optimum and the solver must reproduce it.
    Rng rng(42);
    for (int trial = 0; trial < 20; trial++)
    {
        Rng r = rng.stream(trial);
        const int n = 2 + static_cast<int>(r.uniform_int(6));
        const int m = n + 2 + static_cast<int>(r.uniform_int(5));

        Eigen::MatrixXd R(n, n);
        for (int i = 0; i < n; i++)
            for (int j = 0; j < n; j++)
                R(i, j) = r.normal();
        Eigen::MatrixXd P = R.transpose() * R + 0.1 * Eigen::MatrixXd::Identity(n, n);

        Eigen::MatrixXd A(m, n);
        for (int i = 0; i < m; i++)
            for (int j = 0; j < n; j++)
                A(i, j) = r.normal();

        Vec xs(n);
        for (int i = 0; i < n; i++)
            xs(i) = r.uniform(-1.0, 1.0);

        const int n_active = static_cast<int>(r.uniform_int(std::min(m, n)));
        Vec b(m), y(m);
        for (int i = 0; i < m; i++)
        {
            if (i < n_active)
            {
                b(i) = A.row(i).dot(xs);
                y(i) = r.uniform(0.1, 2.0);
            }
            else
            {
                b(i) = A.row(i).dot(xs) + r.uniform(0.1, 2.0);
                y(i) = 0.0;
            }
        }
        const Vec q = -(P * xs + A.transpose() * y);

        ConeProgram prob;
        prob.n = n;
        prob.P = sparse(P);
        prob.q = q;
        prob.A = sparse(A);
        prob.b = b;
        prob.cones = {{ConeType::NonNeg, m}};

        const ConeSolution sol = solve_cone_program(prob);
        REQUIRE(sol.status == SolveStatus::Optimal);
        CHECK((sol.x - xs).lpNorm<Eigen::Infinity>() <= 1e-6);
        check_cone_membership(prob, sol, 1e-7);
    }
}

TEST_CASE("kkt residuals at the analytic SOCP optimum")
{
    const ConeProgram p = norm_socp();
    ConeSolution sol;
    sol.status = SolveStatus::Optimal;
    sol.x = Vec::Constant(1, 5.0);
    sol.s = Vec(3);
    sol.s << 5.0, 3.0, 4.0;
    sol.y = Vec(3);
    sol.y << 1.0, -3.0 / 5.0, -4.0 / 5.0;
    const Residuals res = kkt_residuals(p, sol);
    CHECK(res.primal <= 1e-12);
    CHECK(res.dual <= 1e-12);
    CHECK(res.gap <= 1e-12);
}

TEST_CASE("kkt residuals detect a perturbed active coordinate")
{
    const ConeProgram p = lp1d();
    ConeSolution sol = solve_cone_program(p);
    sol.x(0) += 0.1; // active row, slack kept
    const Residuals res = kkt_residuals(p, sol);
    CHECK(res.primal >= 0.05);
}

TEST_CASE("zero problem has zero residuals")
{
    ConeProgram p;
    p.n = 1;
    p.q = Vec::Zero(1);
    p.A = SpMat(0, 1);
    p.b = Vec(0);
    const ConeSolution sol = solve_cone_program(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.x(0) == 0.0);
    const Residuals res = kkt_residuals(p, sol);
    CHECK(res.primal == 0.0);
    CHECK(res.dual == 0.0);
    CHECK(res.gap == 0.0);
}

TEST_CASE("primal infeasibility produces a Farkas certificate")
{
    // x >= 1 and x <= 0
    ConeProgram p;
    p.n = 1;
    p.q = Vec::Zero(1);
    Eigen::MatrixXd A(2, 1);
    A << -1.0, 1.0;
    p.A = sparse(A);
    p.b = Vec(2);
    p.b << -1.0, 0.0;
    p.cones = {{ConeType::NonNeg, 2}};

    const ConeSolution sol = solve_cone_program(p);
    REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    REQUIRE(sol.certificate.size() == 2);
    const Vec& y = sol.certificate;
    CHECK(y(0) >= -1e-9);
    CHECK(y(1) >= -1e-9);
    CHECK(p.b.dot(y) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK((p.A.transpose() * y).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("dual infeasibility on an unbounded LP")
{
    // minimize -x subject to x >= 0
    ConeProgram p = lp1d();
    p.q(0) = -1.0;
    const ConeSolution sol = solve_cone_program(p);
    REQUIRE(sol.status == SolveStatus::DualInfeasible);
    REQUIRE(sol.certificate.size() == 1);
    CHECK(p.q.dot(sol.certificate) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("determinism: identical inputs give bitwise identical runs")
{
    Rng rng(7);
    Eigen::MatrixXd A(6, 3), R(3, 3);
    for (int i = 0; i < 6; i++)
        for (int j = 0; j < 3; j++)
            A(i, j) = rng.normal();
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++)
            R(i, j) = rng.normal();

    ConeProgram p;
    p.n = 3;
    p.P = sparse(Eigen::MatrixXd(R.transpose() * R));
    p.q = Vec::Constant(3, 0.3);
    p.A = sparse(A);
    p.b = Vec::Constant(6, 1.0);
    p.cones = {{ConeType::NonNeg, 6}};

    const ConeSolution a = solve_cone_program(p);
    const ConeSolution b = solve_cone_program(p);
    REQUIRE(a.status == b.status);
    CHECK(a.iterations == b.iterations);
    CHECK(memcmp(a.x.data(), b.x.data(), sizeof(double) * a.x.size()) == 0);
    CHECK(a.objective == b.objective);
}

TEST_CASE("optimal returns satisfy the residual contract")
{
    // Mixed QP/SOCP instances with equalities; every Optimal return must have
    // residuals within tolerance and conic s, y.
    Rng rng(2024);
    SolverOptions opts;
    opts.tolerance = 1e-8;
    for (int trial = 0; trial < 12; trial++)
    {
        Rng r = rng.stream(trial);
        const int n = 4 + static_cast<int>(r.uniform_int(4));
        Eigen::MatrixXd R(n, n);
        for (int i = 0; i < n; i++)
            for (int j = 0; j < n; j++)
                R(i, j) = r.normal();
        const bool quad = trial % 2 == 0;

        ConeProgram p;
        p.n = n;
        if (quad)
            p.P = sparse(Eigen::MatrixXd(R.transpose() * R));
        p.q = Vec::Zero(n);
        for (int i = 0; i < n; i++)
            p.q(i) = r.uniform(-1.0, 1.0);

        // one equality, a box, and one SOC spanning the first 3 coordinates
        const int m = 1 + 2 * n + 3;
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, n);
        Vec b = Vec::Zero(m);
        for (int j = 0; j < n; j++)
            A(0, j) = 1.0;
        b(0) = 1.0;
        for (int i = 0; i < n; i++)
        {
            A(1 + i, i) = 1.0;
            b(1 + i) = 2.0;
            A(1 + n + i, i) = -1.0;
            b(1 + n + i) = 2.0;
        }
        // ||(x0, x1)|| <= 1.5
        b(1 + 2 * n) = 1.5;
        A(1 + 2 * n + 1, 0) = -1.0;
        A(1 + 2 * n + 2, 1) = -1.0;

        p.A = sparse(A);
        p.b = b;
        p.cones = {{ConeType::Zero, 1}, {ConeType::NonNeg, 2 * n}, {ConeType::Soc, 3}};

        const ConeSolution sol = solve_cone_program(p, opts);
        REQUIRE(sol.status == SolveStatus::Optimal);
        const Residuals res = kkt_residuals(p, sol);
        CHECK(res.primal <= opts.tolerance);
        CHECK(res.dual <= opts.tolerance);
        CHECK(res.gap <= opts.tolerance);
        CHECK(std::fabs(res.primal - sol.res_primal) <= 1e-10);
        CHECK(std::fabs(res.dual - sol.res_dual) <= 1e-10);
        CHECK(std::fabs(res.gap - sol.res_gap) <= 1e-10);
        check_cone_membership(p, sol, 1e-7);
    }
}

TEST_CASE("iteration cap returns max-iters status, not an exception")
{
    ConeProgram p = norm_socp();
    SolverOptions opts;
    opts.max_iters = 1;
    const ConeSolution sol = solve_cone_program(p, opts);
    CHECK(sol.status == SolveStatus::MaxIters);
}

TEST_CASE("malformed problems are rejected")
{
    ConeProgram p = lp1d();
    p.q = Vec::Zero(2);
    CHECK_THROWS_AS(solve_cone_program(p), ProblemError);

    ConeProgram p2 = norm_socp();
    p2.cones = {{ConeType::Soc, 1}, {ConeType::NonNeg, 2}};
    CHECK_THROWS_AS(solve_cone_program(p2), ProblemError);

    // asymmetric P
    ConeProgram p3 = lp1d();
    Eigen::MatrixXd P(1, 1);
    P << 1.0;
    p3.P = sparse(P);
    p3.P.coeffRef(0, 0) = 1.0;
    p3.n = 1;
    CHECK_NOTHROW(solve_cone_program(p3));

    // indefinite P
    ConeProgram p4 = lp1d();
    Eigen::MatrixXd N(1, 1);
    N << -1.0;
    p4.P = sparse(N);
    CHECK_THROWS_AS(solve_cone_program(p4), ProblemError);
}

TEST_CASE("json round trip preserves the program")
{
    ConeProgram p = norm_socp();
    Eigen::MatrixXd P(1, 1);
    P << 2.0;
    p.P = sparse(P);
    p.obj_const = 0.25;
    const std::string text = to_json(p);
    const ConeProgram back = cone_program_from_json(text);
    CHECK(back.n == p.n);
    CHECK(back.obj_const == p.obj_const);
    CHECK(back.cones.size() == p.cones.size());
    const ConeSolution s1 = solve_cone_program(p);
    const ConeSolution s2 = solve_cone_program(back);
    CHECK(s1.objective == doctest::Approx(s2.objective).epsilon(1e-12));
}

TEST_CASE("update_b re-solves with fresh offsets")
{
    ConeProgram p = lp1d(); // min x, x >= 0
    ConicSolver solver;
    solver.setup(p);
    ConeSolution s0 = solver.solve();
    REQUIRE(s0.status == SolveStatus::Optimal);
    CHECK(std::fabs(s0.x(0)) <= 1e-8);

    // now x >= 2
    Vec b(1);
    b << -2.0;
    solver.update_b(b);
    ConeSolution s1 = solver.solve();
    REQUIRE(s1.status == SolveStatus::Optimal);
    CHECK(s1.x(0) == doctest::Approx(2.0).epsilon(1e-7));
}
