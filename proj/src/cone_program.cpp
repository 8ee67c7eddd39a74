#include "mlopt/cone_program.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace mlopt
{

namespace
{

double max_abs(const SpMat& m)
{
    double v = 0.0;
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            v = std::max(v, std::fabs(it.value()));
    return v;
}

bool all_finite(const SpMat& m)
{
    for (int j = 0; j < m.outerSize(); j++)
        for (SpMat::InnerIterator it(m, j); it; ++it)
            if (!std::isfinite(it.value()))
                return false;
    return true;
}

} // namespace

void ConeProgram::validate() const
{
    if (n < 0)
        throw ProblemError("negative variable count");
    if (q.size() != n)
        throw ProblemError("q has length " + std::to_string(q.size()) + ", expected " +
                           std::to_string(n));
    if (A.rows() != b.size() || (A.cols() != n && A.rows() > 0))
        throw ProblemError("A is " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                           " but b has length " + std::to_string(b.size()) + " and n = " +
                           std::to_string(n));
    if (cone_dim_sum() != rows())
        throw ProblemError("cone segment dimensions sum to " + std::to_string(cone_dim_sum()) +
                           ", expected " + std::to_string(rows()));
    for (const auto& c : cones)
    {
        if (c.dim <= 0)
            throw ProblemError("cone segment with nonpositive dimension");
        if (c.type == ConeType::Soc && c.dim < 2)
            throw ProblemError("second-order cone segment must have dimension >= 2");
    }
    if (!q.allFinite() || !b.allFinite() || !all_finite(A))
        throw ProblemError("non-finite entries in problem data");
    if (P.rows() != 0)
    {
        if (P.rows() != n || P.cols() != n)
            throw ProblemError("P must be n x n");
        if (!all_finite(P))
            throw ProblemError("non-finite entries in P");
        // Symmetry within 1e-12 (relative to the largest entry).
        SpMat D = SpMat(P.transpose()) - P;
        if (max_abs(D) > 1e-12 * std::max(1.0, max_abs(P)))
            throw ProblemError("P is not symmetric");
    }
}

double ConeProgram::objective_value(const Vec& x) const
{
    double v = q.dot(x) + obj_const;
    if (P.rows() > 0)
        v += 0.5 * x.dot(P * x);
    return v;
}

std::string to_string(SolveStatus s)
{
    switch (s)
    {
        case SolveStatus::Optimal:
            return "optimal";
        case SolveStatus::PrimalInfeasible:
            return "primal-infeasible";
        case SolveStatus::DualInfeasible:
            return "dual-infeasible";
        case SolveStatus::MaxIters:
            return "max-iters";
    }
    return "unknown";
}

Residuals kkt_residuals(const ConeProgram& prob, const ConeSolution& sol)
{
    if (sol.x.size() != prob.n || sol.y.size() != prob.rows() || sol.s.size() != prob.rows())
        throw ProblemError("solution dimensions do not match problem");

    Residuals r{};
    const Vec primal = prob.A * sol.x + sol.s - prob.b;
    r.primal = primal.size() > 0 ? primal.lpNorm<Eigen::Infinity>() : 0.0;

    Vec dual = prob.q;
    if (prob.P.rows() > 0)
        dual += prob.P * sol.x;
    if (prob.rows() > 0)
        dual += prob.A.transpose() * sol.y;
    r.dual = dual.size() > 0 ? dual.lpNorm<Eigen::Infinity>() : 0.0;

    const double pobj = prob.objective_value(sol.x);
    double quad = 0.0;
    if (prob.P.rows() > 0)
        quad = 0.5 * sol.x.dot(prob.P * sol.x);
    const double dobj = prob.obj_const - quad - (prob.rows() > 0 ? prob.b.dot(sol.y) : 0.0);
    const double gap = prob.rows() > 0 ? std::fabs(sol.s.dot(sol.y)) : 0.0;
    r.gap = gap / std::max({1.0, std::fabs(pobj), std::fabs(dobj)});
    return r;
}

namespace
{

nlohmann::json sparse_to_json(const SpMat& m)
{
    nlohmann::json j;
    j["format"] = "coo";
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<int> ri, ci;
    std::vector<double> vals;
    for (int c = 0; c < m.outerSize(); c++)
        for (SpMat::InnerIterator it(m, c); it; ++it)
        {
            ri.push_back(static_cast<int>(it.row()));
            ci.push_back(static_cast<int>(it.col()));
            vals.push_back(it.value());
        }
    j["row"] = ri;
    j["col"] = ci;
    j["val"] = vals;
    return j;
}

SpMat sparse_from_json(const nlohmann::json& j)
{
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    SpMat m(rows, cols);
    if (j.at("format") == "dense")
    {
        std::vector<Eigen::Triplet<double>> trip;
        const auto& data = j.at("data");
        for (int r = 0; r < rows; r++)
            for (int c = 0; c < cols; c++)
            {
                const double v = data.at(r).at(c).get<double>();
                if (v != 0.0)
                    trip.emplace_back(r, c, v);
            }
        m.setFromTriplets(trip.begin(), trip.end());
        return m;
    }
    const auto& ri = j.at("row");
    const auto& ci = j.at("col");
    const auto& vals = j.at("val");
    if (ri.size() != ci.size() || ri.size() != vals.size())
        throw ProblemError("coo arrays have mismatched lengths");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(ri.size());
    for (size_t k = 0; k < ri.size(); k++)
        trip.emplace_back(ri.at(k).get<int>(), ci.at(k).get<int>(), vals.at(k).get<double>());
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
}

std::string cone_name(ConeType t)
{
    switch (t)
    {
        case ConeType::Zero:
            return "zero";
        case ConeType::NonNeg:
            return "nonneg";
        case ConeType::Soc:
            return "soc";
    }
    return "?";
}

ConeType cone_from_name(const std::string& s)
{
    if (s == "zero")
        return ConeType::Zero;
    if (s == "nonneg")
        return ConeType::NonNeg;
    if (s == "soc")
        return ConeType::Soc;
    throw ProblemError("unknown cone type '" + s + "'");
}

} // namespace

std::string to_json(const ConeProgram& prob)
{
    nlohmann::json j;
    j["n"] = prob.n;
    j["m"] = prob.rows();
    j["P"] = sparse_to_json(prob.P.rows() > 0 ? prob.P : SpMat(prob.n, prob.n));
    j["q"] = std::vector<double>(prob.q.data(), prob.q.data() + prob.q.size());
    j["A"] = sparse_to_json(prob.A);
    j["b"] = std::vector<double>(prob.b.data(), prob.b.data() + prob.b.size());
    j["obj_const"] = prob.obj_const;
    nlohmann::json cones = nlohmann::json::array();
    for (const auto& c : prob.cones)
        cones.push_back({{"type", cone_name(c.type)}, {"dim", c.dim}});
    j["cones"] = cones;
    return j.dump(2);
}

ConeProgram cone_program_from_json(const std::string& text)
{
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ProblemError(std::string("cone program parse error: ") + e.what());
    }
    ConeProgram prob;
    try
    {
        prob.n = j.at("n").get<int>();
        prob.P = sparse_from_json(j.at("P"));
        if (prob.P.nonZeros() == 0)
            prob.P = SpMat();
        const auto qv = j.at("q").get<std::vector<double>>();
        prob.q = Eigen::Map<const Vec>(qv.data(), static_cast<Eigen::Index>(qv.size()));
        prob.A = sparse_from_json(j.at("A"));
        const auto bv = j.at("b").get<std::vector<double>>();
        prob.b = Eigen::Map<const Vec>(bv.data(), static_cast<Eigen::Index>(bv.size()));
        prob.obj_const = j.value("obj_const", 0.0);
        for (const auto& c : j.at("cones"))
            prob.cones.push_back({cone_from_name(c.at("type").get<std::string>()),
                                  c.at("dim").get<int>()});
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ProblemError(std::string("cone program schema error: ") + e.what());
    }
    prob.validate();
    return prob;
}

} // namespace mlopt
