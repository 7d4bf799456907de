#include <catch_amalgamated.hpp>

#include <random>

#include "support/problems.hpp"
#include "volterra/model.hpp"

using namespace volterra;

TEST_CASE("P1 validates", "[model][validate]")
{
    const auto rep = testdata::p1().validate(64);
    REQUIRE(rep.ok());
    REQUIRE(rep.checks.size() == 5);
    REQUIRE(rep.find("alpha ordering")->value == Catch::Approx(1.0 / 64 / 2));
    REQUIRE(rep.find("K_n(t,t) invertible")->value == 1.0);
}

TEST_CASE("validation failures are reported, not thrown", "[model][validate]")
{
    auto rep = testdata::p1("3*t/2 + 1").validate(64);
    REQUIRE_FALSE(rep.ok());
    REQUIRE_FALSE(rep.find("f(0)=0")->pass);
    REQUIRE(rep.find("f(0)=0")->value == 1.0);

    rep = Problem(1, 1.0, {"t"}, {{{"2"}}, {{"1"}}}, {"3*t/2"}).validate(64);
    REQUIRE_FALSE(rep.find("alpha ordering")->pass);
    REQUIRE_FALSE(rep.find("derivative ordering at 0")->pass);

    rep = Problem(1, 1.0, {"t/2"}, {{{"2"}}, {{"t - 0.5"}}}, {"t"}).validate(64);
    REQUIRE_FALSE(rep.find("K_n(t,t) invertible")->pass);
    REQUIRE(rep.find("K_n(t,t) invertible")->worst_t == 0.5);

    // domain error during sampling surfaces as a failed check
    rep = Problem(1, 1.0, {"t/2"}, {{{"2"}}, {{"ln(t)"}}}, {"t"}).validate(64);
    REQUIRE_FALSE(rep.find("K_n(t,t) invertible")->pass);
    REQUIRE_FALSE(rep.find("K_n(t,t) invertible")->message.empty());

    rep = Problem(1, 1.0, {"t/2 + 0.1"}, {{{"2"}}, {{"1"}}}, {"t"}).validate(64);
    REQUIRE_FALSE(rep.find("alpha(0)=0")->pass);
}

TEST_CASE("construction rejects malformed problems", "[model]")
{
    REQUIRE_THROWS_AS(Problem(1, 1.0, {}, {{{"2"}}, {{"1"}}}, {"t"}), ValidationError);
    REQUIRE_THROWS_AS(Problem(1, 1.0, {"t/2"}, {{{"2"}}, {{"1"}}}, {"t", "t"}), ValidationError);
    REQUIRE_THROWS_AS(Problem(1, 1.0, {"t/2"}, {{{"2"}}, {{"1 +"}}}, {"t"}), ValidationError);
    REQUIRE_THROWS_AS(Problem(1, 1.0, {"t/2"}, {{{"2"}}, {{"u"}}}, {"t"}), ValidationError);
    REQUIRE_THROWS_AS(Problem(1, 1.0, {"s"}, {{{"2"}}, {{"1"}}}, {"t"}), ValidationError);
    REQUIRE_THROWS_AS(Problem(1, -1.0, {"t/2"}, {{{"2"}}, {{"1"}}}, {"t"}), ValidationError);
}

TEST_CASE("locate and kernel evaluation on P1", "[model][locate]")
{
    const auto p = testdata::p1();
    REQUIRE(p.locate(1.0, 0.25) == 1);
    REQUIRE(p.locate(1.0, 0.75) == 2);
    REQUIRE(p.locate(1.0, 0.5) == 1);
    REQUIRE(p.locate(1.0, 1.0) == 2);
    REQUIRE(p.locate(0.0, 0.0) == 1);
    REQUIRE_THROWS_AS(p.locate(0.5, 0.6), ValidationError);
    REQUIRE(p.kernel_eval(1.0, 0.25)(0, 0) == 2.0);
    REQUIRE(p.kernel_eval(1.0, 0.75)(0, 0) == 1.0);
    REQUIRE(p.kernel_dt_eval(1.0, 0.75)(0, 0) == 0.0);
    REQUIRE(p.all_dt_zero());
    REQUIRE(p.f_prime(0.3)(0) == 1.5);
}

TEST_CASE("JSON loading", "[model][json]")
{
    const auto j = nlohmann::json::parse(R"({"name":"p","m":1,"n":2,"T":1,"alphas":["t/2"],
        "kernels":[[["2"]],[[1]]],"f":["3*t/2"]})");
    const auto p = Problem::from_json(j);
    REQUIRE(p.name() == "p");
    REQUIRE(p.kernel_eval(1.0, 0.9)(0, 0) == 1.0);
    auto bad = j;
    bad["extra"] = 1;
    REQUIRE_THROWS_AS(Problem::from_json(bad), ValidationError);
    bad = j;
    bad.erase("f");
    REQUIRE_THROWS_AS(Problem::from_json(bad), ValidationError);
    bad = j;
    bad["n"] = 3;
    REQUIRE_THROWS_AS(Problem::from_json(bad), ValidationError);
    bad = j;
    bad["m"] = 1.5;
    REQUIRE_THROWS_AS(Problem::from_json(bad), ValidationError);
}

TEST_CASE("partition: exactly one region per point, continuity inside regions", "[model][property]")
{
    const Problem p(2, 2.0, {"t/4 + t^2/16", "t/2 + t^2/16"},
                    {{{"1 + t*s", "s"}, {"0", "2"}},
                     {{"3 - s", "t"}, {"1", "cos(s)"}},
                     {{"2 + s^2", "0"}, {"t - s", "4"}}},
                    {"t", "sin(t)"});
    REQUIRE(p.validate(256).ok());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 10000; ++k) {
        const double t = 2.0 * u(rng);
        const double s = t * u(rng);
        int matches = 0;
        for (int i = 1; i <= p.n(); ++i)
            if (p.alpha(i - 1, t) < s && s <= p.alpha(i, t)) ++matches;
        if (s == 0.0) matches = 1;
        REQUIRE(matches == 1);
        const int i = p.locate(t, s);
        REQUIRE(p.alpha(i - 1, t) <= s);
        REQUIRE(s <= p.alpha(i, t));
        // a small move that stays inside the open region changes the kernel by O(step)
        const double step = 1e-7;
        if (s - step > p.alpha(i - 1, t) && s + step < p.alpha(i, t)) {
            const Mat d = p.kernel_eval(t, s + step) - p.kernel_eval(t, s - step);
            REQUIRE(d.cwiseAbs().maxCoeff() <= 10 * step);
        }
    }
}

TEST_CASE("entries_dt matches finite differences", "[model][property]")
{
    const Problem p(1, 1.0, {"t/2 + t^2/8"}, {{{"exp(t*s)"}}, {{"1 + t^2*s + sin(t)"}}}, {"t*cos(t)"});
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    for (int k = 0; k < 500; ++k) {
        const double t = u(rng), s = t * u(rng);
        for (int i = 1; i <= 2; ++i) {
            const double h = 1e-6;
            const double fd = (p.kernel_piece(i, t + h, s)(0, 0) - p.kernel_piece(i, t - h, s)(0, 0)) / (2 * h);
            const double ex = p.kernel_piece_dt(i, t, s)(0, 0);
            REQUIRE(std::abs(fd - ex) <= 1e-5 * std::max(1.0, std::abs(ex)));
        }
        const double h = 1e-6;
        REQUIRE(p.alpha_prime(1, t) == Catch::Approx((p.alpha(1, t + h) - p.alpha(1, t - h)) / (2 * h)).epsilon(1e-5));
    }
}
