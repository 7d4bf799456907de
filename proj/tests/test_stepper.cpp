#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "support/problems.hpp"
#include "volterra/stepper.hpp"

using namespace volterra;

namespace {

double max_error(const GridSolution& sol, double (*exact)(double))
{
    double e = 0.0;
    for (std::size_t k = 0; k < sol.size(); ++k) e = std::max(e, std::abs(sol.values[k](0) - exact(sol.nodes[k])));
    return e;
}

double one(double) { return 1.0; }
double cosine(double t) { return std::cos(t); }

std::vector<double> uniform(double a, double b, int cells)
{
    std::vector<double> v;
    for (int k = 0; k <= cells; ++k) v.push_back(a + (b - a) * k / cells);
    return v;
}

} // namespace

TEST_CASE("second-kind form of P1 and P2", "[stepper][form]")
{
    const auto p1 = testdata::p1();
    const SecondKindForm f1(p1);
    REQUIRE(f1.C(1, 0.3)(0, 0) == 0.5);
    REQUIRE(f1.fbar(0.3)(0) == 1.5);
    REQUIRE(f1.G_zero());
    REQUIRE(f1.G(1, 0.5, 0.1)(0, 0) == 0.0);

    const auto p2 = testdata::p2();
    const SecondKindForm f2(p2);
    REQUIRE(f2.C(1, 0.3)(0, 0) == -1.0);
    REQUIRE(f2.fbar(0.3)(0) == -1.0);

    const auto pv = testdata::varkernel_cos();
    const SecondKindForm fv(pv);
    REQUIRE_FALSE(fv.G_zero());
    // G_1 = K_2(t,t)^{-1} d/dt (2 + t s) = s
    REQUIRE(fv.G(1, 0.8, 0.3)(0, 0) == Catch::Approx(0.3));
    REQUIRE(fv.G(2, 0.8, 0.6)(0, 0) == Catch::Approx(1.0));
    REQUIRE(std::abs(expr::eval(pv.f_expr(0), {{"t", 0.7}}) -
                     1.0832026494663756356) <= 1e-15);
}

TEST_CASE("solve_initial", "[stepper][initial]")
{
    const auto p1 = testdata::p1();
    const SecondKindForm f1(p1);
    const auto r = solve_initial(f1, uniform(0.0, 0.225, 100), 1e-10, 200);
    REQUIRE(r.stats.converged);
    for (const auto& v : r.values) REQUIRE(std::abs(v(0) - 1.0) <= 1e-10);
    // contraction certificate: observed ratio <= q + 0.05 with q = 0.5
    for (double ratio : r.stats.ratios) REQUIRE(ratio <= 0.55);

    const auto pz = testdata::p1("0");
    const auto rz = solve_initial(SecondKindForm(pz), uniform(0.0, 0.2, 50));
    REQUIRE(rz.stats.converged);
    REQUIRE(rz.stats.iterations == 1);
    for (const auto& v : rz.values) REQUIRE(v(0) == 0.0);

    const auto p2 = testdata::p2();
    const auto r2 = solve_initial(SecondKindForm(p2), uniform(0.0, 0.2, 50), 1e-10, 50);
    REQUIRE_FALSE(r2.stats.converged);
    REQUIRE_FALSE(r2.stats.contractive);
    REQUIRE(r2.stats.ratios.back() == Catch::Approx(1.0));
}

TEST_CASE("advance continues the solution", "[stepper][advance]")
{
    const auto p1 = testdata::p1();
    const SecondKindForm f1(p1);
    const double h = 0.225;
    GridSolution hist;
    const auto first = solve_initial(f1, uniform(0.0, h, 90));
    hist.nodes = uniform(0.0, h, 90);
    hist.values = first.values;
    const auto step = advance(f1, hist, uniform(h, 2 * h, 90));
    REQUIRE(step.stats.converged);
    REQUIRE(step.values.front()(0) == hist.values.back()(0));
    for (const auto& v : step.values) REQUIRE(std::abs(v(0) - 1.0) <= 1e-10);

    // alpha(t) = t/2 > h for t > 2h
    REQUIRE_THROWS_AS(advance(f1, hist, uniform(h, 3 * h, 90)), NumericalError);

    const auto pz = testdata::p1("0");
    GridSolution zero;
    zero.nodes = uniform(0.0, h, 10);
    zero.values.assign(11, Vec::Zero(1));
    const auto z = advance(SecondKindForm(pz), zero, uniform(h, 2 * h, 10));
    for (const auto& v : z.values) REQUIRE(v(0) == 0.0);
}

TEST_CASE("solve P1 recovers x = 1", "[stepper][solve]")
{
    const auto sol = solve(testdata::p1(), {2048, 1e-10, 200, 512});
    REQUIRE(sol.nodes.front() == 0.0);
    REQUIRE(sol.nodes.back() == 1.0);
    REQUIRE(sol.size() >= 2040);
    REQUIRE(sol.size() <= 2056);
    REQUIRE(max_error(sol, one) <= 1e-6);
    REQUIRE(sol.stats.size() == sol.intervals.size());
    REQUIRE(residual_first_kind(testdata::p1(), sol).max <= 1e-9);
}

TEST_CASE("second-order convergence on manufactured solutions", "[stepper][order][property]")
{
    for (const auto& p : {testdata::p1_cos(), testdata::varkernel_cos()}) {
        std::vector<double> err;
        for (int grid : {129, 257, 513, 1025}) err.push_back(max_error(solve(p, {grid, 1e-12, 200, 512}), cosine));
        for (std::size_t k = 1; k < err.size(); ++k) {
            const double order = std::log2(err[k - 1] / err[k]);
            INFO("grid level " << k << " errors " << err[k - 1] << " -> " << err[k]);
            REQUIRE(order >= 1.7);
            REQUIRE(order <= 2.3);
        }
    }
}

TEST_CASE("first-kind residual scales like grid^-2", "[stepper][residual][property]")
{
    const auto p = testdata::varkernel_cos();
    std::vector<double> scaled;
    for (int grid : {129, 257, 513}) {
        const auto sol = solve(p, {grid, 1e-12, 200, 512});
        scaled.push_back(residual_first_kind(p, sol).max * grid * grid);
    }
    const double C = *std::max_element(scaled.begin(), scaled.end());
    for (double v : scaled) REQUIRE(v >= C / 3);
    REQUIRE(C < 10.0);
}

TEST_CASE("decoupled 2x2 system equals scalar runs", "[stepper][solve]")
{
    const auto sys = testdata::diag2({"2", "1"}, {"2", "1"}, {"t/2"}, "3*t/2", "sin(t/2) + sin(t)");
    const auto s2 = solve(sys, {513, 1e-12, 200, 512});
    const auto a = solve(testdata::p1(), {513, 1e-12, 200, 512});
    const auto b = solve(testdata::p1_cos(), {513, 1e-12, 200, 512});
    REQUIRE(s2.size() == a.size());
    for (std::size_t k = 0; k < s2.size(); ++k) {
        REQUIRE(s2.nodes[k] == a.nodes[k]);
        REQUIRE(std::abs(s2.values[k](0) - a.values[k](0)) <= 1e-14);
        REQUIRE(std::abs(s2.values[k](1) - b.values[k](0)) <= 1e-14);
    }
}

TEST_CASE("residual_first_kind oracles", "[stepper][residual]")
{
    const auto p = testdata::p1();
    GridSolution s;
    s.nodes = uniform(0.0, 1.0, 64);
    s.values.assign(65, Vec::Zero(1));
    REQUIRE(residual_first_kind(p, s).max == Catch::Approx(1.5));

    // x = 1 + delta leaves the residual 1.5 delta t, worst at t = 1
    double prev = 0.0;
    for (double delta : {1e-3, 2e-3, 4e-3}) {
        s.values.assign(65, Vec::Constant(1, 1.0 + delta));
        const auto r = residual_first_kind(p, s);
        REQUIRE(r.max == Catch::Approx(1.5 * delta).epsilon(1e-9));
        REQUIRE(r.worst_t == 1.0);
        if (prev > 0.0) REQUIRE(r.max / prev == Catch::Approx(2.0).epsilon(1e-9));
        prev = r.max;
    }
}

TEST_CASE("interval joints are shared nodes", "[stepper][solve]")
{
    const auto sol = solve(testdata::varkernel_cos(), {300, 1e-12, 200, 512});
    for (const auto& [a, b] : sol.intervals) {
        const auto count = std::count(sol.nodes.begin(), sol.nodes.end(), a);
        REQUIRE(count == 1);
        (void)b;
    }
}

TEST_CASE("CSV round trip and determinism", "[stepper][csv][property]")
{
    const auto p = testdata::varkernel_cos();
    const auto a = solve(p, {257, 1e-12, 200, 512});
    const auto b = solve(p, {257, 1e-12, 200, 512});
    std::ostringstream oa, ob;
    write_csv(oa, a, {"c1=0"});
    write_csv(ob, b, {"c1=0"});
    REQUIRE(oa.str() == ob.str());
    REQUIRE(oa.str().rfind("# c1=0\nt,x1\n", 0) == 0);

    std::istringstream in(oa.str());
    const auto back = read_csv(in);
    REQUIRE(back.size() == a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(back.nodes[k] == a.nodes[k]);
        REQUIRE(back.values[k](0) == a.values[k](0));
    }
    std::istringstream bad("t,x1\n0,1\n0,2\n");
    REQUIRE_THROWS_AS(read_csv(bad), ValidationError);
    std::istringstream bad2("t,y\n0,1\n");
    REQUIRE_THROWS_AS(read_csv(bad2), ValidationError);
}
