#include "mlopt/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

namespace mlopt
{

namespace
{

/* Internal fixed parameters of the interior-point loop. */
constexpr double kStepScale = 0.99;  // fraction-to-boundary
constexpr double kStepMin = 1e-6;
constexpr double kStepMax = 0.999;
constexpr double kSigmaMin = 1e-4;
constexpr double kSigmaMax = 1.0;
constexpr double kSafeguard = 500.0; // primal residual blow-up factor
constexpr double kLinSysAcc = 1e-14;
constexpr double kIrErrFact = 6.0;

struct SocScaling
{
    int dim = 0;
    double eta_sq = 1.0;
    double a = 0.0;
    double w = 0.0;
    Vec q;              // dim - 1
    double d1 = 0.0;    // KKT expansion terms, see updateScalings()
    double u0 = 0.0;
    double u1 = 0.0;
    double v1 = 0.0;
};

struct Iterate
{
    Vec x, y, z, s;
    double tau = 1.0;
    double kap = 1.0;

    // statistics of this iterate
    double pres_abs = 0.0;
    double dres_abs = 0.0;
    double gap_rel = 0.0;
    double gap_abs = 0.0;
    double gap = 0.0;
    double mu = 0.0;
    double pcost = 0.0;
    double dcost = 0.0;
    int iter = 0;

    bool better_than(const Iterate& o) const
    {
        return std::max({pres_abs, dres_abs, gap_rel}) <
               std::max({o.pres_abs, o.dres_abs, o.gap_rel});
    }
};

} // namespace

struct ConicSolver::Impl
{
    SolverOptions opts;
    ConeProgram orig;

    // Internal problem:  min c'v  s.t.  Aeq v = beq,  G v + s = h,  s in K
    // where v = [x; t] with t the epigraph variable when P != 0.
    int nv = 0;   // internal variables
    int neq = 0;  // equality rows
    int mc = 0;   // cone rows (nonneg + SOCs)
    int nl = 0;   // nonneg rows
    std::vector<int> soc_dims;
    bool has_quad = false;
    SpMat Vquad; // P = Vquad' Vquad  (r x n)

    std::vector<int> eq_of_orig;   // orig row -> equality slot, -1 otherwise
    std::vector<int> cone_of_orig; // orig row -> cone slot, -1 otherwise

    SpMat Aeq, G, Aeq_t, G_t;
    Vec c, beq, h;
    Vec e_v, e_eq, e_g; // Ruiz equilibration scalings (divisors)
    double data_norm = 1.0;

    // KKT system in EiCOS layout: [dI A' G'; A -dI 0; G 0 -V] with each SOC
    // scaling stored as the 2-row sparse expansion of W^2.
    int dimK = 0;
    SpMat K;
    std::vector<double*> ptrV; // value slots of the -V block
    Eigen::SimplicialLDLT<SpMat, Eigen::Upper> ldlt;
    bool analyzed = false;

    // per-iteration scalings
    Vec lp_v, lp_w; // nonneg: W^2 diag and W diag
    std::vector<SocScaling> socs;
    Vec lambda;

    // residual scratch
    Vec rx, ry, rz;
    double rt = 0.0;
    double hresx = 0.0, hresy = 0.0, hresz = 0.0;
    double nx = 0.0, ny = 0.0, nz = 0.0, ns = 0.0;
    double cx = 0.0, by = 0.0, hz = 0.0;

    Vec rhs1, rhs2;

    void setup(const ConeProgram& prob, const SolverOptions& o);
    void update_b(const Vec& b);
    ConeSolution solve();

    void factor_quadratic();
    void build_internal();
    void equilibrate();
    void setup_kkt();
    void reset_kkt_scalings();
    void update_kkt_scalings();

    bool update_scalings(const Vec& s_in, const Vec& z_in);
    void scale(const Vec& z_in, Vec& out) const;     // out = W z
    void scale2add(const Vec& x_in, Vec& y_out) const;
    double conic_product(const Vec& u, const Vec& v, Vec& w) const;
    void conic_division(const Vec& u, const Vec& w, Vec& v) const;
    void bring_to_cone(const Vec& r, Vec& s) const;
    double line_search(const Vec& lam, const Vec& ds, const Vec& dz, double tau, double dtau,
                       double kap, double dkap) const;
    int solve_kkt(const Vec& rhs, Vec& dx, Vec& dy, Vec& dz, bool initialize);

    void compute_residuals(Iterate& w);
    void update_statistics(Iterate& w);

    ConeSolution finalize(const Iterate& w, SolveStatus status, int iters);
    bool try_primal_certificate(const Iterate& w, ConeSolution& out, int iters);
    bool try_dual_certificate(const Iterate& w, ConeSolution& out, int iters);
    ConeSolution solve_unconstrained();
    ConeSolution solve_fixed();
};

ConicSolver::ConicSolver() : impl_(new Impl) {}
ConicSolver::~ConicSolver() = default;
ConicSolver::ConicSolver(ConicSolver&&) noexcept = default;
ConicSolver& ConicSolver::operator=(ConicSolver&&) noexcept = default;

void ConicSolver::setup(const ConeProgram& prob, const SolverOptions& opts)
{
    impl_->setup(prob, opts);
}

void ConicSolver::update_b(const Vec& b)
{
    impl_->update_b(b);
}

ConeSolution ConicSolver::solve()
{
    return impl_->solve();
}

ConeSolution solve_cone_program(const ConeProgram& prob, const SolverOptions& opts)
{
    ConicSolver solver;
    solver.setup(prob, opts);
    return solver.solve();
}

void ConicSolver::Impl::setup(const ConeProgram& prob, const SolverOptions& o)
{
    prob.validate();
    opts = o;
    orig = prob;
    factor_quadratic();
    build_internal();
    if (orig.rows() > 0 && orig.n > 0)
    {
        equilibrate();
        setup_kkt();
    }
}

/**
 * Certifies P positive semidefinite and extracts a factor V with P = V'V.
 * Rank-deficient P (e.g. objectives that do not touch every variable) drops
 * the zero pivots.
 */
void ConicSolver::Impl::factor_quadratic()
{
    has_quad = orig.P.rows() > 0 && orig.P.nonZeros() > 0;
    if (!has_quad)
        return;

    Eigen::MatrixXd Pd(orig.P);
    Eigen::LDLT<Eigen::MatrixXd> ldl(Pd);
    const double scale = std::max(1.0, Pd.diagonal().cwiseAbs().maxCoeff());
    Vec d = ldl.vectorD();
    for (int i = 0; i < d.size(); i++)
    {
        if (d(i) < -1e-9 * scale)
            throw ProblemError("P is not positive semidefinite (pivot " + std::to_string(d(i)) +
                               ")");
        if (d(i) < 0.0)
            d(i) = 0.0;
    }
    // P = Pi' L D L' Pi  =>  V = D^(1/2) L' Pi
    const Eigen::MatrixXd Pit =
        ldl.transpositionsP().transpose() * Eigen::MatrixXd::Identity(Pd.rows(), Pd.cols());
    Eigen::MatrixXd Vd =
        d.cwiseSqrt().asDiagonal() * Eigen::MatrixXd(ldl.matrixU()) * Pit.transpose();

    std::vector<Eigen::Triplet<double>> trip;
    int r = 0;
    const double drop = 1e-14 * std::max(1.0, Vd.cwiseAbs().maxCoeff());
    for (int i = 0; i < Vd.rows(); i++)
    {
        if (Vd.row(i).cwiseAbs().maxCoeff() <= drop)
            continue;
        for (int j = 0; j < Vd.cols(); j++)
            if (std::fabs(Vd(i, j)) > drop)
                trip.emplace_back(r, j, Vd(i, j));
        r++;
    }
    Vquad.resize(r, orig.n);
    Vquad.setFromTriplets(trip.begin(), trip.end());
    if (r == 0)
        has_quad = false;
}

void ConicSolver::Impl::build_internal()
{
    const int n = orig.n;
    const int m = orig.rows();
    const int qr = has_quad ? static_cast<int>(Vquad.rows()) : 0;
    nv = n + (has_quad ? 1 : 0);

    eq_of_orig.assign(m, -1);
    cone_of_orig.assign(m, -1);

    // Row order inside the cone block: nonneg rows first, then SOC segments
    // in their original order, then the epigraph cone.
    neq = 0;
    nl = 0;
    soc_dims.clear();
    int row = 0;
    for (const auto& seg : orig.cones)
    {
        if (seg.type == ConeType::Zero)
            neq += seg.dim;
        else if (seg.type == ConeType::NonNeg)
            nl += seg.dim;
        else
            soc_dims.push_back(seg.dim);
        row += seg.dim;
    }
    if (has_quad)
        soc_dims.push_back(qr + 2);
    mc = nl;
    for (int d : soc_dims)
        mc += d;

    std::vector<Eigen::Triplet<double>> ta, tg;
    beq.resize(neq);
    h.resize(mc);
    h.setZero();

    int eq_at = 0, lp_at = 0, soc_at = nl;
    row = 0;
    for (const auto& seg : orig.cones)
    {
        for (int k = 0; k < seg.dim; k++)
        {
            const int r = row + k;
            if (seg.type == ConeType::Zero)
            {
                eq_of_orig[r] = eq_at;
                beq(eq_at) = orig.b(r);
                eq_at++;
            }
            else if (seg.type == ConeType::NonNeg)
            {
                cone_of_orig[r] = lp_at;
                h(lp_at) = orig.b(r);
                lp_at++;
            }
            else
            {
                cone_of_orig[r] = soc_at;
                h(soc_at) = orig.b(r);
                soc_at++;
            }
        }
        row += seg.dim;
    }

    for (int col = 0; col < orig.A.outerSize(); col++)
        for (SpMat::InnerIterator it(orig.A, col); it; ++it)
        {
            const int r = static_cast<int>(it.row());
            if (eq_of_orig[r] >= 0)
                ta.emplace_back(eq_of_orig[r], static_cast<int>(it.col()), it.value());
            else
                tg.emplace_back(cone_of_orig[r], static_cast<int>(it.col()), it.value());
        }

    // Epigraph of the quadratic term: x'Px/2 <= t  <=>  (t+1, t-1, sqrt(2) V x) in SOC.
    if (has_quad)
    {
        const int base = soc_at;
        tg.emplace_back(base, n, -1.0);
        h(base) = 1.0;
        tg.emplace_back(base + 1, n, -1.0);
        h(base + 1) = -1.0;
        const double rt2 = std::sqrt(2.0);
        for (int col = 0; col < Vquad.outerSize(); col++)
            for (SpMat::InnerIterator it(Vquad, col); it; ++it)
                tg.emplace_back(base + 2 + static_cast<int>(it.row()),
                                static_cast<int>(it.col()), -rt2 * it.value());
    }

    Aeq.resize(neq, nv);
    Aeq.setFromTriplets(ta.begin(), ta.end());
    G.resize(mc, nv);
    G.setFromTriplets(tg.begin(), tg.end());

    c.resize(nv);
    c.head(n) = orig.q;
    if (has_quad)
        c(n) = 1.0;

    double dn = c.lpNorm<Eigen::Infinity>();
    for (int col = 0; col < orig.A.outerSize(); col++)
        for (SpMat::InnerIterator it(orig.A, col); it; ++it)
            dn = std::max(dn, std::fabs(it.value()));
    data_norm = std::max(1.0, dn);
}

namespace
{

void max_rows(Vec& e, const SpMat& m)
{
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            e(it.row()) = std::max(std::fabs(it.value()), e(it.row()));
}

void max_cols(Vec& e, const SpMat& m)
{
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            e(j) = std::max(std::fabs(it.value()), e(j));
}

void scale_rows(const Vec& e, SpMat& m)
{
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            it.valueRef() /= e(it.row());
}

void scale_cols(const Vec& e, SpMat& m)
{
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            it.valueRef() /= e(j);
}

} // namespace

/* Ruiz-style equilibration; SOC row groups share one scaling so the cone
 * geometry is preserved. */
void ConicSolver::Impl::equilibrate()
{
    e_v = Vec::Ones(nv);
    e_eq = Vec::Ones(neq);
    e_g = Vec::Ones(mc);

    Vec tv(nv), teq(neq), tg(mc);
    for (int iter = 0; iter < opts.equil_iters; iter++)
    {
        tv.setZero();
        teq.setZero();
        tg.setZero();
        max_cols(tv, Aeq);
        max_cols(tv, G);
        max_rows(teq, Aeq);
        max_rows(tg, G);

        int at = nl;
        for (int d : soc_dims)
        {
            const double total = tg.segment(at, d).sum();
            tg.segment(at, d).setConstant(total);
            at += d;
        }

        auto sq = [](double a) { return std::fabs(a) < 1e-6 ? 1.0 : std::sqrt(a); };
        tv = tv.unaryExpr(sq);
        teq = teq.unaryExpr(sq);
        tg = tg.unaryExpr(sq);

        scale_rows(teq, Aeq);
        scale_rows(tg, G);
        scale_cols(tv, Aeq);
        scale_cols(tv, G);

        e_v = e_v.cwiseProduct(tv);
        e_eq = e_eq.cwiseProduct(teq);
        e_g = e_g.cwiseProduct(tg);
    }

    c = c.cwiseQuotient(e_v);
    beq = beq.cwiseQuotient(e_eq);
    h = h.cwiseQuotient(e_g);

    Aeq_t = Aeq.transpose();
    G_t = G.transpose();
}

void ConicSolver::Impl::update_b(const Vec& b)
{
    if (b.size() != orig.b.size())
        throw ProblemError("update_b: wrong length");
    if (!b.allFinite())
        throw ProblemError("update_b: non-finite entries");
    orig.b = b;
    if (orig.rows() == 0 || orig.n == 0)
        return;
    for (int r = 0; r < orig.rows(); r++)
    {
        if (eq_of_orig[r] >= 0)
            beq(eq_of_orig[r]) = b(r) / e_eq(eq_of_orig[r]);
        else
            h(cone_of_orig[r]) = b(r) / e_g(cone_of_orig[r]);
    }
}

/**
 * KKT matrix (upper triangle):
 *
 *     [ dI  A'  G' ]
 *     [  .  -dI  0 ]
 *     [  .   .  -V ]
 *
 * V holds the identity at setup and the Nesterov-Todd scalings W^2 during
 * iterations. Each SOC block of W^2 = eta^2 (2 w w' - J) is stored as the
 * sparse quasi-definite expansion [D v u; v' 1 0; u' 0 -1] with two extra
 * rows, which keeps the factorization fill-in low.
 */
void ConicSolver::Impl::setup_kkt()
{
    const int n_sc = static_cast<int>(soc_dims.size());
    dimK = nv + neq + mc + 2 * n_sc;

    std::vector<Eigen::Triplet<double>> trip;
    const double dstat = opts.static_reg;

    for (int k = 0; k < nv; k++)
        trip.emplace_back(k, k, dstat);
    for (int k = 0; k < neq; k++)
        trip.emplace_back(nv + k, nv + k, -dstat);

    // A' block
    for (int col = 0; col < Aeq_t.outerSize(); col++)
        for (SpMat::InnerIterator it(Aeq_t, col); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), nv + col, it.value());

    // G' block, with gaps for the SOC expansion rows
    {
        int col_k = nv + neq;
        int col_g = 0;
        for (int col = 0; col < nl; col++, col_g++, col_k++)
            for (SpMat::InnerIterator it(G_t, col_g); it; ++it)
                trip.emplace_back(static_cast<int>(it.row()), col_k, it.value());
        for (int d : soc_dims)
        {
            for (int col = 0; col < d; col++, col_g++, col_k++)
                for (SpMat::InnerIterator it(G_t, col_g); it; ++it)
                    trip.emplace_back(static_cast<int>(it.row()), col_k, it.value());
            col_k += 2;
        }
    }

    // -V block
    {
        int diag = nv + neq;
        for (int k = 0; k < nl; k++, diag++)
            trip.emplace_back(diag, diag, -1.0);
        for (int d : soc_dims)
        {
            for (int k = 0; k < d; k++, diag++)
                trip.emplace_back(diag, diag, -1.0);
            // first expansion row: diagonal -1 and the v column
            trip.emplace_back(diag, diag, -1.0);
            for (int k = 1; k < d; k++)
                trip.emplace_back(diag - d + k, diag, 0.0);
            diag++;
            // second expansion row: diagonal +1 and the u column
            trip.emplace_back(diag, diag, 1.0);
            for (int k = 0; k < d; k++)
                trip.emplace_back(diag - d - 1 + k, diag, 0.0);
            diag++;
        }
    }

    K.resize(dimK, dimK);
    K.setFromTriplets(trip.begin(), trip.end());
    K.makeCompressed();

    // Cache value pointers of the -V block for the per-iteration updates.
    ptrV.clear();
    {
        int diag = nv + neq;
        for (int k = 0; k < nl; k++, diag++)
            ptrV.push_back(&K.coeffRef(diag, diag));
        for (int d : soc_dims)
        {
            for (int k = 0; k < d; k++, diag++)
                ptrV.push_back(&K.coeffRef(diag, diag));
            ptrV.push_back(&K.coeffRef(diag, diag));
            for (int k = 1; k < d; k++)
                ptrV.push_back(&K.coeffRef(diag - d + k, diag));
            diag++;
            ptrV.push_back(&K.coeffRef(diag, diag));
            for (int k = 0; k < d; k++)
                ptrV.push_back(&K.coeffRef(diag - d - 1 + k, diag));
            diag++;
        }
    }

    lp_v.resize(nl);
    lp_w.resize(nl);
    socs.clear();
    socs.resize(soc_dims.size());
    for (size_t i = 0; i < soc_dims.size(); i++)
    {
        socs[i].dim = soc_dims[i];
        socs[i].q.resize(soc_dims[i] - 1);
    }
    lambda.resize(mc);
    rx.resize(nv);
    ry.resize(neq);
    rz.resize(mc);
    rhs1.resize(dimK);
    rhs2.resize(dimK);
    analyzed = false;
}

void ConicSolver::Impl::reset_kkt_scalings()
{
    size_t p = 0;
    for (int k = 0; k < nl; k++)
        *ptrV[p++] = -1.0;
    for (const SocScaling& sc : socs)
    {
        for (int k = 0; k < sc.dim; k++)
            *ptrV[p++] = -1.0;
        *ptrV[p++] = -1.0;
        for (int k = 1; k < sc.dim; k++)
            *ptrV[p++] = 0.0;
        *ptrV[p++] = 1.0;
        for (int k = 0; k < sc.dim; k++)
            *ptrV[p++] = 0.0;
    }
}

void ConicSolver::Impl::update_kkt_scalings()
{
    const double dstat = opts.static_reg;
    size_t p = 0;
    for (int k = 0; k < nl; k++)
        *ptrV[p++] = -lp_v(k) - dstat;
    for (const SocScaling& sc : socs)
    {
        *ptrV[p++] = -sc.eta_sq * sc.d1 - dstat;
        for (int k = 1; k < sc.dim; k++)
            *ptrV[p++] = -sc.eta_sq - dstat;
        *ptrV[p++] = -sc.eta_sq;
        for (int k = 1; k < sc.dim; k++)
            *ptrV[p++] = -sc.eta_sq * sc.v1 * sc.q(k - 1);
        *ptrV[p++] = sc.eta_sq + dstat;
        *ptrV[p++] = -sc.eta_sq * sc.u0;
        for (int k = 1; k < sc.dim; k++)
            *ptrV[p++] = -sc.eta_sq * sc.u1 * sc.q(k - 1);
    }
}

/* Nesterov-Todd scalings; returns false when an iterate left the cone. */
bool ConicSolver::Impl::update_scalings(const Vec& s_in, const Vec& z_in)
{
    for (int i = 0; i < nl; i++)
    {
        if (s_in(i) <= 0.0 || z_in(i) <= 0.0)
            return false;
        lp_v(i) = s_in(i) / z_in(i);
        lp_w(i) = std::sqrt(lp_v(i));
    }

    int at = nl;
    for (SocScaling& sc : socs)
    {
        const double sres =
            s_in(at) * s_in(at) - s_in.segment(at + 1, sc.dim - 1).squaredNorm();
        const double zres =
            z_in(at) * z_in(at) - z_in.segment(at + 1, sc.dim - 1).squaredNorm();
        if (sres <= 0.0 || zres <= 0.0)
            return false;
        const double snorm = std::sqrt(sres);
        const double znorm = std::sqrt(zres);
        const Vec skbar = s_in.segment(at, sc.dim) / snorm;
        const Vec zkbar = z_in.segment(at, sc.dim) / znorm;
        sc.eta_sq = snorm / znorm;

        double gamma = std::sqrt(0.5 * (1.0 + skbar.dot(zkbar)));
        sc.a = (0.5 / gamma) * (skbar(0) + zkbar(0));
        sc.q = (0.5 / gamma) * (skbar.tail(sc.dim - 1) - zkbar.tail(sc.dim - 1));
        sc.w = sc.q.squaredNorm();

        const double cc = (1.0 + sc.a) + sc.w / (1.0 + sc.a);
        const double dd = 1.0 + 2.0 / (1.0 + sc.a) + sc.w / std::pow(1.0 + sc.a, 2);
        const double d1 =
            std::max(0.0, 0.5 * (sc.a * sc.a + sc.w * (1.0 - cc * cc / (1.0 + sc.w * dd))));
        const double u0_sq = sc.a * sc.a + sc.w - d1;
        const double c2u2 = cc * cc / u0_sq;
        if (c2u2 - dd <= 0.0)
            return false;
        sc.d1 = d1;
        sc.u0 = std::sqrt(u0_sq);
        sc.u1 = std::sqrt(c2u2);
        sc.v1 = std::sqrt(c2u2 - dd);
        at += sc.dim;
    }
    scale(z_in, lambda);
    return true;
}

void ConicSolver::Impl::scale(const Vec& z_in, Vec& out) const
{
    out.head(nl) = lp_w.cwiseProduct(z_in.head(nl));
    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const double eta = std::sqrt(sc.eta_sq);
        const double zeta = sc.q.dot(z_in.segment(at + 1, sc.dim - 1));
        const double factor = z_in(at) + zeta / (1.0 + sc.a);
        out(at) = eta * (sc.a * z_in(at) + zeta);
        out.segment(at + 1, sc.dim - 1) =
            eta * (z_in.segment(at + 1, sc.dim - 1) + factor * sc.q);
        at += sc.dim;
    }
}

/* y += W^2 x in the expanded indexing of the KKT cone block. */
void ConicSolver::Impl::scale2add(const Vec& x_in, Vec& y_out) const
{
    y_out.head(nl) += lp_v.cwiseProduct(x_in.head(nl));
    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const int i1 = at;
        const int i2 = i1 + 1;
        const int i3 = i2 + sc.dim - 1;
        const int i4 = i3 + 1;
        y_out(i1) += sc.eta_sq * (sc.d1 * x_in(i1) + sc.u0 * x_in(i4));
        const double v1x3_u1x4 = sc.v1 * x_in(i3) + sc.u1 * x_in(i4);
        y_out.segment(i2, sc.dim - 1) +=
            sc.eta_sq * (x_in.segment(i2, sc.dim - 1) + v1x3_u1x4 * sc.q);
        const double qtx2 = sc.q.dot(x_in.segment(i2, sc.dim - 1));
        y_out(i3) += sc.eta_sq * (sc.v1 * qtx2 + x_in(i3));
        y_out(i4) = sc.eta_sq * (sc.u0 * x_in(i1) + sc.u1 * qtx2 - x_in(i4));
        at += sc.dim + 2;
    }
}

double ConicSolver::Impl::conic_product(const Vec& u, const Vec& v, Vec& w) const
{
    w.head(nl) = u.head(nl).cwiseProduct(v.head(nl));
    double mu = w.head(nl).lpNorm<1>();
    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const double u0 = u(at);
        const double v0 = v(at);
        w(at) = u.segment(at, sc.dim).dot(v.segment(at, sc.dim));
        mu += std::fabs(w(at));
        w.segment(at + 1, sc.dim - 1) =
            u0 * v.segment(at + 1, sc.dim - 1) + v0 * u.segment(at + 1, sc.dim - 1);
        at += sc.dim;
    }
    return mu;
}

void ConicSolver::Impl::conic_division(const Vec& u, const Vec& w, Vec& v) const
{
    v.head(nl) = w.head(nl).cwiseQuotient(u.head(nl));
    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const double u0 = u(at);
        const double w0 = w(at);
        const double rho = u0 * u0 - u.segment(at + 1, sc.dim - 1).squaredNorm();
        const double zeta = u.segment(at + 1, sc.dim - 1).dot(w.segment(at + 1, sc.dim - 1));
        const double factor = (zeta / u0 - w0) / rho;
        v(at) = (u0 * w0 - zeta) / rho;
        v.segment(at + 1, sc.dim - 1) =
            factor * u.segment(at + 1, sc.dim - 1) + w.segment(at + 1, sc.dim - 1) / u0;
        at += sc.dim;
    }
}

void ConicSolver::Impl::bring_to_cone(const Vec& r, Vec& s) const
{
    double alpha = -0.99;
    for (int i = 0; i < nl; i++)
        if (r(i) <= 0 && -r(i) > alpha)
            alpha = -r(i);
    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const double cres = r(at) - r.segment(at + 1, sc.dim - 1).norm();
        if (cres <= 0 && -cres > alpha)
            alpha = -cres;
        at += sc.dim;
    }
    alpha += 1.0;
    s = r;
    s.head(nl).array() += alpha;
    at = nl;
    for (const SocScaling& sc : socs)
    {
        s(at) += alpha;
        at += sc.dim;
    }
}

double ConicSolver::Impl::line_search(const Vec& lam, const Vec& ds, const Vec& dz, double tau,
                                      double dtau, double kap, double dkap) const
{
    double alpha = 10.0;
    if (nl > 0)
    {
        const double rhomin = (ds.head(nl).cwiseQuotient(lam.head(nl))).minCoeff();
        const double sigmamin = (dz.head(nl).cwiseQuotient(lam.head(nl))).minCoeff();
        const double worst = std::min(rhomin, sigmamin);
        alpha = worst < 0.0 ? 1.0 / (-worst) : 1.0 / 1e-13;
    }

    const double t_tau = -tau / dtau;
    const double t_kap = -kap / dkap;
    if (t_tau > 0.0 && t_tau < alpha)
        alpha = t_tau;
    if (t_kap > 0.0 && t_kap < alpha)
        alpha = t_kap;

    int at = nl;
    for (const SocScaling& sc : socs)
    {
        const double lk2 =
            lam(at) * lam(at) - lam.segment(at + 1, sc.dim - 1).squaredNorm();
        if (lk2 <= 0.0)
        {
            at += sc.dim;
            continue;
        }
        const double lknorm = std::sqrt(lk2);
        const Vec lkbar = lam.segment(at, sc.dim) / lknorm;
        const double lkinv = 1.0 / lknorm;

        const double lk_ds = lkbar(0) * ds(at) -
                             lkbar.tail(sc.dim - 1).dot(ds.segment(at + 1, sc.dim - 1));
        const double lk_dz = lkbar(0) * dz(at) -
                             lkbar.tail(sc.dim - 1).dot(dz.segment(at + 1, sc.dim - 1));

        double factor = (lk_ds + ds(at)) / (lkbar(0) + 1.0);
        const double rho0 = lkinv * lk_ds;
        const double rhonorm =
            (lkinv * (ds.segment(at + 1, sc.dim - 1) - factor * lkbar.tail(sc.dim - 1))).norm() -
            rho0;

        factor = (lk_dz + dz(at)) / (lkbar(0) + 1.0);
        const double sig0 = lkinv * lk_dz;
        const double signorm =
            (lkinv * (dz.segment(at + 1, sc.dim - 1) - factor * lkbar.tail(sc.dim - 1))).norm() -
            sig0;

        const double conic_step = std::max({0.0, rhonorm, signorm});
        if (conic_step != 0.0)
            alpha = std::min(alpha, 1.0 / conic_step);
        at += sc.dim;
    }
    return std::clamp(alpha, kStepMin, kStepMax);
}

int ConicSolver::Impl::solve_kkt(const Vec& rhs, Vec& dx, Vec& dy, Vec& dz, bool initialize)
{
    Vec sol = ldlt.solve(rhs);
    const double err_thresh = (1.0 + rhs.lpNorm<Eigen::Infinity>()) * kLinSysAcc;
    const int mtilde = mc + 2 * static_cast<int>(socs.size());
    const double dstat = opts.static_reg;

    double nerr_prev = std::numeric_limits<double>::max();
    Vec sol_ref(dimK);
    Vec e(dimK);

    int k_ref;
    for (k_ref = 0; k_ref <= opts.refine_iters; k_ref++)
    {
        // expanded -> compact copy of the cone part
        const auto dxs = sol.head(nv);
        const auto dys = sol.segment(nv, neq);
        dz.head(nl) = sol.segment(nv + neq, nl);
        {
            int zi = nl, xi = nv + neq + nl;
            for (const SocScaling& sc : socs)
            {
                dz.segment(zi, sc.dim) = sol.segment(xi, sc.dim);
                zi += sc.dim;
                xi += sc.dim + 2;
            }
        }

        // residual of the unregularized KKT system
        Vec ex = rhs.head(nv) - G_t * dz;
        if (neq > 0)
            ex -= Aeq_t * dys;
        ex -= dstat * dxs;

        Vec ey = rhs.segment(nv, neq);
        if (neq > 0)
            ey -= Aeq * dxs;
        ey += dstat * dys;

        const Vec Gdx = G * dxs;
        Vec ez(mtilde);
        ez.head(nl) = rhs.segment(nv + neq, nl) - Gdx.head(nl) + dstat * dz.head(nl);
        {
            int ezi = nl, zi = nl;
            for (const SocScaling& sc : socs)
            {
                ez.segment(ezi, sc.dim) =
                    rhs.segment(nv + neq + ezi, sc.dim) - Gdx.segment(zi, sc.dim);
                ez.segment(ezi, sc.dim - 1) += dstat * dz.segment(zi, sc.dim - 1);
                zi += sc.dim;
                ezi += sc.dim;
                ez(ezi - 1) -= dstat * dz(zi - 1);
                ez(ezi++) = 0.0;
                ez(ezi++) = 0.0;
            }
        }
        const auto dz_exp = sol.tail(mtilde);
        if (initialize)
            ez += dz_exp;
        else
            scale2add(dz_exp, ez);

        double nerr = std::max(ex.lpNorm<Eigen::Infinity>(), ez.lpNorm<Eigen::Infinity>());
        if (neq > 0)
            nerr = std::max(nerr, ey.lpNorm<Eigen::Infinity>());

        if (k_ref > 0 && nerr > nerr_prev)
        {
            sol -= sol_ref;
            k_ref--;
            break;
        }
        if (k_ref == opts.refine_iters || nerr < err_thresh ||
            (k_ref > 0 && nerr_prev < kIrErrFact * nerr))
            break;
        nerr_prev = nerr;

        e << ex, ey, ez;
        sol_ref = ldlt.solve(e);
        sol += sol_ref;
    }

    dx = sol.head(nv);
    dy = sol.segment(nv, neq);
    dz.head(nl) = sol.segment(nv + neq, nl);
    {
        int zi = nl, xi = nv + neq + nl;
        for (const SocScaling& sc : socs)
        {
            dz.segment(zi, sc.dim) = sol.segment(xi, sc.dim);
            zi += sc.dim;
            xi += sc.dim + 2;
        }
    }
    return k_ref;
}

void ConicSolver::Impl::compute_residuals(Iterate& w)
{
    // rx = -Aeq'y - G'z - tau c ; ry = Aeq x - tau beq ; rz = s + G x - tau h
    rx = -(G_t * w.z);
    if (neq > 0)
        rx -= Aeq_t * w.y;
    hresx = rx.norm();
    rx -= w.tau * c;

    if (neq > 0)
    {
        ry = Aeq * w.x;
        hresy = ry.norm();
        ry -= w.tau * beq;
    }
    else
        hresy = 0.0;

    rz = w.s + G * w.x;
    hresz = rz.norm();
    rz -= w.tau * h;

    cx = c.dot(w.x);
    by = neq > 0 ? beq.dot(w.y) : 0.0;
    hz = h.dot(w.z);
    rt = w.kap + cx + by + hz;

    nx = w.x.norm();
    ny = w.y.norm();
    nz = w.z.norm();
    ns = w.s.norm();
}

void ConicSolver::Impl::update_statistics(Iterate& w)
{
    w.gap = w.s.dot(w.z);
    w.mu = (w.gap + w.kap * w.tau) / (nl + static_cast<int>(socs.size()) + 1);
    w.pcost = cx / w.tau;
    w.dcost = -(hz + by) / w.tau;

    // Residuals of the de-equilibrated, tau-scaled iterate. These are the
    // quantities the Optimal contract is stated in.
    double pa = 0.0;
    if (neq > 0)
        pa = (e_eq.cwiseProduct(ry)).lpNorm<Eigen::Infinity>();
    pa = std::max(pa, (e_g.cwiseProduct(rz)).lpNorm<Eigen::Infinity>());
    w.pres_abs = pa / w.tau;
    w.dres_abs = (e_v.cwiseProduct(rx)).lpNorm<Eigen::Infinity>() / w.tau;

    const double pobj = w.pcost + orig.obj_const;
    const double dobj = w.dcost + orig.obj_const;
    w.gap_abs = std::fabs(w.gap) / (w.tau * w.tau);
    w.gap_rel = w.gap_abs / std::max({1.0, std::fabs(pobj), std::fabs(dobj)});
}

ConeSolution ConicSolver::Impl::finalize(const Iterate& w, SolveStatus status, int iters)
{
    ConeSolution out;
    out.status = status;
    out.iterations = iters;
    const int n = orig.n;
    const int m = orig.rows();
    out.x = (w.x.head(n).cwiseQuotient(e_v.head(n))) / w.tau;
    out.y.resize(m);
    out.s.resize(m);
    for (int r = 0; r < m; r++)
    {
        if (eq_of_orig[r] >= 0)
        {
            const int i = eq_of_orig[r];
            out.y(r) = w.y(i) / (e_eq(i) * w.tau);
            out.s(r) = 0.0;
        }
        else
        {
            const int i = cone_of_orig[r];
            out.y(r) = w.z(i) / (e_g(i) * w.tau);
            out.s(r) = w.s(i) * e_g(i) / w.tau;
        }
    }
    out.objective = orig.objective_value(out.x);
    const Residuals res = kkt_residuals(orig, out);
    out.res_primal = res.primal;
    out.res_dual = res.dual;
    out.res_gap = res.gap;
    return out;
}

bool ConicSolver::Impl::try_primal_certificate(const Iterate& w, ConeSolution& out, int iters)
{
    // Farkas ray: Aeq'y + G'z = 0, z in K*, beq'y + h'z < 0.
    const int m = orig.rows();
    Vec cert(m);
    for (int r = 0; r < m; r++)
        cert(r) = eq_of_orig[r] >= 0 ? w.y(eq_of_orig[r]) / e_eq(eq_of_orig[r])
                                     : w.z(cone_of_orig[r]) / e_g(cone_of_orig[r]);
    const double bty = orig.b.dot(cert);
    if (bty >= -1e-300)
        return false;
    cert /= -bty;
    const double res = (orig.A.transpose() * cert).lpNorm<Eigen::Infinity>();
    const double tol = std::max(opts.tolerance, 1e-9) * data_norm *
                       std::max(1.0, cert.lpNorm<Eigen::Infinity>());
    if (res > tol)
        return false;
    out = ConeSolution{};
    out.status = SolveStatus::PrimalInfeasible;
    out.iterations = iters;
    out.certificate = cert;
    out.x = Vec::Zero(orig.n);
    out.y = cert;
    out.s = Vec::Zero(m);
    out.objective = std::numeric_limits<double>::infinity();
    return true;
}

bool ConicSolver::Impl::try_dual_certificate(const Iterate& w, ConeSolution& out, int iters)
{
    // Unbounded ray: A x + s = 0, s in K, q'x < 0 (and P x = 0 via the
    // epigraph cone, see below).
    const int n = orig.n;
    Vec xr = w.x.head(n).cwiseQuotient(e_v.head(n));
    const double qx = orig.q.dot(xr);
    if (qx >= -1e-300)
        return false;
    xr /= -qx;
    Vec sr(orig.rows());
    for (int r = 0; r < orig.rows(); r++)
        sr(r) = eq_of_orig[r] >= 0 ? 0.0 : w.s(cone_of_orig[r]) * e_g(cone_of_orig[r]) / (-qx);
    double res = (orig.A * xr + sr).lpNorm<Eigen::Infinity>();
    if (has_quad)
    {
        // the ray must be objective-linear: P x = 0
        res = std::max(res, (orig.P * xr).lpNorm<Eigen::Infinity>());
    }
    const double tol = std::max(opts.tolerance, 1e-9) * data_norm *
                       std::max(1.0, xr.lpNorm<Eigen::Infinity>());
    if (res > tol)
        return false;
    out = ConeSolution{};
    out.status = SolveStatus::DualInfeasible;
    out.iterations = iters;
    out.certificate = xr;
    out.x = xr;
    out.y = Vec::Zero(orig.rows());
    out.s = sr;
    out.objective = -std::numeric_limits<double>::infinity();
    return true;
}

/* No constraints: either q = 0 (x = 0 optimal) or the problem is unbounded
 * along -q / the null space of P. */
ConeSolution ConicSolver::Impl::solve_unconstrained()
{
    ConeSolution out;
    out.y.resize(0);
    out.s.resize(0);
    out.iterations = 0;
    if (!has_quad)
    {
        if (orig.q.lpNorm<Eigen::Infinity>() == 0.0)
        {
            out.status = SolveStatus::Optimal;
            out.x = Vec::Zero(orig.n);
            out.objective = orig.obj_const;
            return out;
        }
        out.status = SolveStatus::DualInfeasible;
        out.x = -orig.q / orig.q.squaredNorm();
        out.certificate = out.x;
        out.objective = -std::numeric_limits<double>::infinity();
        return out;
    }
    Eigen::MatrixXd Pd(orig.P);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Pd);
    Vec x = cod.solve(-orig.q);
    if ((Pd * x + orig.q).lpNorm<Eigen::Infinity>() <=
        1e-9 * std::max(1.0, orig.q.lpNorm<Eigen::Infinity>()))
    {
        out.status = SolveStatus::Optimal;
        out.x = x;
        out.objective = orig.objective_value(x);
        return out;
    }
    // q has a component in the null space of P: descend along it.
    Vec d = -(orig.q + Pd * x);
    d /= -orig.q.dot(d);
    out.status = SolveStatus::DualInfeasible;
    out.x = d;
    out.certificate = d;
    out.objective = -std::numeric_limits<double>::infinity();
    return out;
}

/* No variables: the program is feasible iff b itself sits in the cone. */
ConeSolution ConicSolver::Impl::solve_fixed()
{
    ConeSolution out;
    out.x.resize(0);
    out.iterations = 0;
    const int m = orig.rows();
    out.y = Vec::Zero(m);
    out.s = orig.b;
    int row = 0;
    for (const auto& seg : orig.cones)
    {
        if (seg.type == ConeType::Zero)
        {
            for (int k = 0; k < seg.dim; k++)
                if (std::fabs(orig.b(row + k)) > opts.tolerance)
                {
                    out.status = SolveStatus::PrimalInfeasible;
                    out.certificate = Vec::Zero(m);
                    out.certificate(row + k) = orig.b(row + k) > 0 ? -1.0 : 1.0;
                    out.certificate /= std::fabs(orig.b(row + k));
                    out.y = out.certificate;
                    out.objective = std::numeric_limits<double>::infinity();
                    return out;
                }
        }
        else if (seg.type == ConeType::NonNeg)
        {
            for (int k = 0; k < seg.dim; k++)
                if (orig.b(row + k) < -opts.tolerance)
                {
                    out.status = SolveStatus::PrimalInfeasible;
                    out.certificate = Vec::Zero(m);
                    out.certificate(row + k) = 1.0 / (-orig.b(row + k));
                    out.y = out.certificate;
                    out.objective = std::numeric_limits<double>::infinity();
                    return out;
                }
        }
        else
        {
            const double r0 = orig.b(row);
            const double rn = orig.b.segment(row + 1, seg.dim - 1).norm();
            if (r0 < rn - opts.tolerance)
            {
                out.status = SolveStatus::PrimalInfeasible;
                Vec cert = Vec::Zero(m);
                cert(row) = 1.0;
                if (rn > 0)
                    cert.segment(row + 1, seg.dim - 1) =
                        -orig.b.segment(row + 1, seg.dim - 1) / rn;
                cert /= rn - r0;
                out.certificate = cert;
                out.y = cert;
                out.objective = std::numeric_limits<double>::infinity();
                return out;
            }
        }
        row += seg.dim;
    }
    out.status = SolveStatus::Optimal;
    out.objective = orig.obj_const;
    return out;
}

ConeSolution ConicSolver::Impl::solve()
{
    if (orig.rows() == 0)
        return solve_unconstrained();
    if (orig.n == 0)
        return solve_fixed();

    reset_kkt_scalings();

    // rhs1 = [0; beq; h] with gaps at the expansion rows
    rhs1.setZero();
    rhs1.segment(nv, neq) = beq;
    rhs1.segment(nv + neq, nl) = h.head(nl);
    {
        int hi = nl, ri = nv + neq + nl;
        for (const SocScaling& sc : socs)
        {
            rhs1.segment(ri, sc.dim) = h.segment(hi, sc.dim);
            hi += sc.dim;
            ri += sc.dim + 2;
        }
    }
    rhs2.setZero();
    rhs2.head(nv) = -c;

    if (!analyzed)
    {
        ldlt.analyzePattern(K);
        analyzed = true;
    }
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success)
        throw ProblemError("initial KKT factorization failed");

    Iterate w;
    w.x.resize(nv);
    w.y.resize(neq);
    w.z.resize(mc);
    w.s.resize(mc);

    Vec dx1(nv), dy1(neq), dz1(mc);
    Vec dx2(nv), dy2(neq), dz2(mc);

    // Initialization: primal part from min ||Gx - h|| s.t. Aeq x = beq,
    // dual part from min ||z|| s.t. G'z + Aeq'y + c = 0; both shifted into
    // the cone interior.
    solve_kkt(rhs1, dx1, dy1, dz1, true);
    w.x = dx1;
    bring_to_cone(-dz1, w.s);
    solve_kkt(rhs2, dx2, dy2, dz2, true);
    w.y = dy2;
    bring_to_cone(dz2, w.z);
    w.tau = 1.0;
    w.kap = 1.0;

    rhs1.head(nv) = -c;

    Vec W_dz(mc), ds_by_W(mc), ds(mc), ds1(mc), ds2(mc);
    Iterate best = w;
    bool have_best = false;
    double pres_prev = std::numeric_limits<double>::max();
    double step = 0.0;

    SolveStatus status = SolveStatus::MaxIters;
    int iter = 0;
    ConeSolution cert_out;

    for (iter = 0; iter <= opts.max_iters; iter++)
    {
        compute_residuals(w);
        update_statistics(w);
        w.iter = iter;

        if (opts.verbose)
            std::printf("%3d  pcost=%+.6e  pres=%.2e dres=%.2e gap=%.2e tau=%.2e kap=%.2e\n",
                        iter, w.pcost, w.pres_abs, w.dres_abs, w.gap_rel, w.tau, w.kap);

        // Divergence safeguard: fall back to the best iterate seen.
        if (iter > 0 && (w.pres_abs > kSafeguard * pres_prev || w.gap < 0.0))
        {
            if (have_best)
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }
        pres_prev = w.pres_abs;

        if (w.pres_abs <= opts.tolerance && w.dres_abs <= opts.tolerance &&
            (w.gap_abs <= opts.tolerance || w.gap_rel <= 1e-2 * opts.tolerance))
        {
            status = SolveStatus::Optimal;
            break;
        }

        // Infeasibility: certificates only fire once tau is dominated by kappa.
        if (w.kap > w.tau)
        {
            if ((hz + by) / std::max(ny + nz, 1.0) < -1e-8 &&
                hresx / std::max(ny + nz, 1.0) < 1e-8 * data_norm)
            {
                if (try_primal_certificate(w, cert_out, iter))
                    return cert_out;
            }
            if (cx / std::max(nx, 1.0) < -1e-8 &&
                std::max(hresy / std::max(nx, 1.0), hresz / std::max(nx + ns, 1.0)) <
                    1e-8 * data_norm)
            {
                if (try_dual_certificate(w, cert_out, iter))
                    return cert_out;
            }
        }

        if (iter == opts.max_iters)
        {
            if (have_best && best.better_than(w))
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }
        if (!std::isfinite(w.pcost) || !std::isfinite(w.mu))
        {
            if (have_best)
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }
        if (iter > 0 && step == kStepMin * kStepScale)
        {
            // line search hit the floor: no further progress possible
            if (have_best && best.better_than(w))
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }

        if (!have_best || w.better_than(best))
        {
            best = w;
            have_best = true;
        }

        if (!update_scalings(w.s, w.z))
        {
            if (have_best)
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }
        update_kkt_scalings();
        ldlt.factorize(K);
        if (ldlt.info() != Eigen::Success)
        {
            if (have_best)
                w = best;
            status = SolveStatus::MaxIters;
            break;
        }

        solve_kkt(rhs1, dx1, dy1, dz1, false);
        const double dtau_denom =
            w.kap / w.tau - c.dot(dx1) - beq.dot(dy1) - h.dot(dz1);

        // ---- affine (predictor) direction ----
        rhs2.head(nv) = rx;
        rhs2.segment(nv, neq) = -ry;
        {
            rhs2.segment(nv + neq, nl) = w.s.head(nl) - rz.head(nl);
            int ri = nv + neq + nl, zi = nl;
            for (const SocScaling& sc : socs)
            {
                rhs2.segment(ri, sc.dim) = w.s.segment(zi, sc.dim) - rz.segment(zi, sc.dim);
                zi += sc.dim;
                ri += sc.dim;
                rhs2.segment(ri, 2).setZero();
                ri += 2;
            }
        }
        solve_kkt(rhs2, dx2, dy2, dz2, false);

        const double dtauaff =
            (rt - w.kap + c.dot(dx2) + beq.dot(dy2) + h.dot(dz2)) / dtau_denom;
        dz2 += dtauaff * dz1;
        scale(dz2, W_dz);
        ds_by_W = -W_dz - lambda; // W^{-T} ds_aff
        const double dkapaff = -w.kap - w.kap / w.tau * dtauaff;

        const double step_aff =
            line_search(lambda, ds_by_W, W_dz, w.tau, dtauaff, w.kap, dkapaff);
        const double sigma =
            std::clamp(std::pow(1.0 - step_aff, 3), kSigmaMin, kSigmaMax);

        // ---- combined (corrector) direction ----
        const double sigmamu = sigma * w.mu;
        conic_product(lambda, lambda, ds1);
        conic_product(ds_by_W, W_dz, ds2);
        ds1 += ds2;
        ds1.head(nl).array() -= sigmamu;
        {
            int at = nl;
            for (const SocScaling& sc : socs)
            {
                ds1(at) -= sigmamu;
                at += sc.dim;
            }
        }
        conic_division(lambda, ds1, ds_by_W);
        scale(ds_by_W, ds1); // ds1 = W (lambda \ ds)

        const double one_minus_sigma = 1.0 - sigma;
        rhs2.head(nv) = one_minus_sigma * rx;
        rhs2.segment(nv, neq) = -one_minus_sigma * ry;
        {
            rhs2.segment(nv + neq, nl) =
                -one_minus_sigma * rz.head(nl) + ds1.head(nl);
            int ri = nv + neq + nl, zi = nl;
            for (const SocScaling& sc : socs)
            {
                rhs2.segment(ri, sc.dim) =
                    -one_minus_sigma * rz.segment(zi, sc.dim) + ds1.segment(zi, sc.dim);
                zi += sc.dim;
                ri += sc.dim;
                rhs2.segment(ri, 2).setZero();
                ri += 2;
            }
        }
        solve_kkt(rhs2, dx2, dy2, dz2, false);

        const double bkap = w.kap * w.tau + dkapaff * dtauaff - sigmamu;
        const double dtau = (one_minus_sigma * rt - bkap / w.tau + c.dot(dx2) +
                             beq.dot(dy2) + h.dot(dz2)) /
                            dtau_denom;
        dx2 += dtau * dx1;
        dy2 += dtau * dy1;
        dz2 += dtau * dz1;

        scale(dz2, W_dz);
        ds_by_W = -(ds_by_W + W_dz);
        const double dkap = -(bkap + w.kap * dtau) / w.tau;

        step = kStepScale * line_search(lambda, ds_by_W, W_dz, w.tau, dtau, w.kap, dkap);
        scale(ds_by_W, ds); // unscale: ds = W (W^{-T} ds)

        w.x += step * dx2;
        w.y += step * dy2;
        w.z += step * dz2;
        w.s += step * ds;
        w.kap += step * dkap;
        w.tau += step * dtau;
    }

    return finalize(w, status, iter);
}

} // namespace mlopt
