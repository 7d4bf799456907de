#pragma once

// Problem statement: boundary curves alpha_i(t), kernel pieces K_i(t,s) on the
// regions alpha_{i-1}(t) <= s <= alpha_i(t), right-hand side f(t), horizon T.
// Pieces are numbered 1..n; alpha_0 = 0 and alpha_n = t.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "volterra/errors.hpp"
#include "volterra/expr.hpp"
#include "volterra/linalg.hpp"

namespace volterra {

struct BoundaryCurve {
    expr::Expr alpha;
    expr::Expr alpha_prime;
    expr::Compiled alpha_c;
    expr::Compiled alpha_prime_c;
};

/// Row-major m*m grids of kernel entries and their t-derivatives.
struct KernelPiece {
    std::vector<expr::Expr> entries;
    std::vector<expr::Expr> entries_dt;
    std::vector<expr::Compiled> entries_c;
    std::vector<expr::Compiled> entries_dt_c;
    bool dt_zero = true;
};

struct ValidationCheck {
    std::string name;
    bool pass = true;
    double worst_t = 0.0; ///< sample point where the check is tightest
    double value = 0.0;   ///< check-specific margin at worst_t
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool ok() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const ValidationCheck& c) { return c.pass; });
    }
    const ValidationCheck* find(const std::string& name) const
    {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

class Problem {
public:
    Problem(int m, double T, const std::vector<std::string>& alphas,
            const std::vector<std::vector<std::vector<std::string>>>& kernels, const std::vector<std::string>& f)
        : m_(m), n_(static_cast<int>(kernels.size())), T_(T)
    {
        if (m_ < 1) throw ValidationError("m must be >= 1");
        if (n_ < 1) throw ValidationError("at least one kernel piece is required");
        if (!(T_ > 0.0) || !std::isfinite(T_)) throw ValidationError("T must be a positive finite number");
        if (static_cast<int>(alphas.size()) != n_ - 1)
            throw ValidationError("expected " + std::to_string(n_ - 1) + " boundary curves, got " +
                                  std::to_string(alphas.size()));
        if (static_cast<int>(f.size()) != m_)
            throw ValidationError("f must have " + std::to_string(m_) + " components");

        const std::vector<std::string> t_only{"t"};
        const std::vector<std::string> ts{"t", "s"};

        for (std::size_t i = 0; i < alphas.size(); ++i) {
            BoundaryCurve bc;
            bc.alpha = parse_field(alphas[i], "alphas[" + std::to_string(i) + "]", t_only);
            bc.alpha_prime = expr::differentiate(bc.alpha, "t");
            bc.alpha_c = expr::Compiled(bc.alpha, t_only);
            bc.alpha_prime_c = expr::Compiled(bc.alpha_prime, t_only);
            curves_.push_back(std::move(bc));
        }
        for (int i = 0; i < n_; ++i) {
            const auto& grid = kernels[static_cast<std::size_t>(i)];
            const std::string where = "kernels[" + std::to_string(i) + "]";
            if (static_cast<int>(grid.size()) != m_) throw ValidationError(where + " must have " + std::to_string(m_) + " rows");
            KernelPiece kp;
            for (int r = 0; r < m_; ++r) {
                const auto& row = grid[static_cast<std::size_t>(r)];
                if (static_cast<int>(row.size()) != m_)
                    throw ValidationError(where + "[" + std::to_string(r) + "] must have " + std::to_string(m_) + " entries");
                for (int c = 0; c < m_; ++c) {
                    auto e = parse_field(row[static_cast<std::size_t>(c)],
                                         where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]", ts);
                    auto d = expr::differentiate(e, "t");
                    kp.entries_c.emplace_back(e, ts);
                    kp.entries_dt_c.emplace_back(d, ts);
                    if (!kp.entries_dt_c.back().is_zero()) kp.dt_zero = false;
                    kp.entries.push_back(std::move(e));
                    kp.entries_dt.push_back(std::move(d));
                }
            }
            pieces_.push_back(std::move(kp));
        }
        for (int r = 0; r < m_; ++r) {
            auto e = parse_field(f[static_cast<std::size_t>(r)], "f[" + std::to_string(r) + "]", t_only);
            auto d = expr::differentiate(e, "t");
            f_c_.emplace_back(e, t_only);
            f_prime_c_.emplace_back(d, t_only);
            f_.push_back(std::move(e));
            f_prime_.push_back(std::move(d));
        }
    }

    /// Builds a problem from the JSON document described in docs/problem-schema.json.
    static Problem from_json(const nlohmann::json& j)
    {
        if (!j.is_object()) throw ValidationError("problem must be a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            static const std::vector<std::string> known{"m", "n", "T", "alphas", "kernels", "f", "name", "description"};
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw ValidationError("unknown field '" + it.key() + "'");
        }
        for (const char* key : {"m", "n", "T", "alphas", "kernels", "f"})
            if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
        if (!j["m"].is_number_integer()) throw ValidationError("'m' must be an integer");
        if (!j["n"].is_number_integer()) throw ValidationError("'n' must be an integer");
        if (!j["T"].is_number()) throw ValidationError("'T' must be a number");
        const int m = j["m"].get<int>();
        const int n = j["n"].get<int>();
        const double T = j["T"].get<double>();
        const auto alphas = string_list(j["alphas"], "alphas");
        const auto f = string_list(j["f"], "f");
        if (!j["kernels"].is_array()) throw ValidationError("'kernels' must be an array");
        if (static_cast<int>(j["kernels"].size()) != n)
            throw ValidationError("'kernels' must have n=" + std::to_string(n) + " pieces");
        std::vector<std::vector<std::vector<std::string>>> kernels;
        for (std::size_t i = 0; i < j["kernels"].size(); ++i) {
            const auto& piece = j["kernels"][i];
            const std::string where = "kernels[" + std::to_string(i) + "]";
            if (!piece.is_array()) throw ValidationError("'" + where + "' must be an array of rows");
            std::vector<std::vector<std::string>> rows;
            for (std::size_t r = 0; r < piece.size(); ++r)
                rows.push_back(string_list(piece[r], where + "[" + std::to_string(r) + "]"));
            kernels.push_back(std::move(rows));
        }
        Problem p(m, T, alphas, kernels, f);
        if (j.contains("name")) {
            if (!j["name"].is_string()) throw ValidationError("'name' must be a string");
            p.name_ = j["name"].get<std::string>();
        }
        return p;
    }

    static Problem load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open problem file '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(std::string("malformed JSON: ") + e.what());
        }
        return from_json(j);
    }

    int m() const noexcept { return m_; }
    int n() const noexcept { return n_; }
    double T() const noexcept { return T_; }
    const std::string& name() const noexcept { return name_; }

    const BoundaryCurve& curve(int i) const { return curves_.at(static_cast<std::size_t>(i - 1)); }
    const KernelPiece& piece(int i) const { return pieces_.at(static_cast<std::size_t>(i - 1)); }
    const expr::Expr& f_expr(int r) const { return f_.at(static_cast<std::size_t>(r)); }
    const expr::Expr& f_prime_expr(int r) const { return f_prime_.at(static_cast<std::size_t>(r)); }

    /// alpha_i(t) for i = 0..n (alpha_0 = 0, alpha_n = t).
    template <class T = double>
    T alpha(int i, T t) const
    {
        if (i <= 0) return T(0);
        if (i >= n_) return t;
        return curves_[static_cast<std::size_t>(i - 1)].alpha_c(t);
    }

    template <class T = double>
    T alpha_prime(int i, T t) const
    {
        if (i <= 0) return T(0);
        if (i >= n_) return T(1);
        return curves_[static_cast<std::size_t>(i - 1)].alpha_prime_c(t);
    }

    /// K_i(t,s) for an explicitly chosen piece (no region lookup).
    template <class T>
    void kernel_piece(int i, T t, T s, MatT<T>& out) const
    {
        fill(pieces_[static_cast<std::size_t>(i - 1)].entries_c, t, s, out);
    }

    template <class T>
    void kernel_piece_dt(int i, T t, T s, MatT<T>& out) const
    {
        const auto& kp = pieces_[static_cast<std::size_t>(i - 1)];
        if (kp.dt_zero) {
            out.setZero(m_, m_);
            return;
        }
        fill(kp.entries_dt_c, t, s, out);
    }

    Mat kernel_piece(int i, double t, double s) const
    {
        Mat out;
        kernel_piece<double>(i, t, s, out);
        return out;
    }

    Mat kernel_piece_dt(int i, double t, double s) const
    {
        Mat out;
        kernel_piece_dt<double>(i, t, s, out);
        return out;
    }

    bool piece_dt_zero(int i) const { return pieces_.at(static_cast<std::size_t>(i - 1)).dt_zero; }
    bool all_dt_zero() const
    {
        return std::all_of(pieces_.begin(), pieces_.end(), [](const KernelPiece& k) { return k.dt_zero; });
    }

    /// Region containing (t,s): smallest i with s <= alpha_i(t).
    int locate(double t, double s) const
    {
        if (s > t) throw ValidationError("locate: s > t is outside the domain");
        if (s < 0.0) throw ValidationError("locate: s < 0 is outside the domain");
        for (int i = 1; i < n_; ++i)
            if (s <= alpha(i, t)) return i;
        return n_;
    }

    Mat kernel_eval(double t, double s) const { return kernel_piece(locate(t, s), t, s); }
    Mat kernel_dt_eval(double t, double s) const { return kernel_piece_dt(locate(t, s), t, s); }

    template <class T>
    void f(T t, VecT<T>& out) const
    {
        out.resize(m_);
        for (int r = 0; r < m_; ++r) out(r) = f_c_[static_cast<std::size_t>(r)](t);
    }

    template <class T>
    void f_prime(T t, VecT<T>& out) const
    {
        out.resize(m_);
        for (int r = 0; r < m_; ++r) out(r) = f_prime_c_[static_cast<std::size_t>(r)](t);
    }

    Vec f(double t) const
    {
        Vec out;
        f<double>(t, out);
        return out;
    }

    Vec f_prime(double t) const
    {
        Vec out;
        f_prime<double>(t, out);
        return out;
    }

    /// Sampled check of the structural hypotheses on t_k = T*k/samples.
    ValidationReport validate(int samples = 512) const
    {
        if (samples < 16) throw ValidationError("validate: samples must be >= 16");
        ValidationReport rep;
        rep.checks.push_back(check_alpha_zero());
        rep.checks.push_back(check_ordering(samples));
        rep.checks.push_back(check_derivative_ordering());
        rep.checks.push_back(check_f_zero());
        rep.checks.push_back(check_invertible(samples));
        return rep;
    }

private:
    static constexpr double kZeroTol = 1e-12;
    static constexpr double kRankTol = 1e-9;

    static expr::Expr parse_field(const std::string& text, const std::string& where, const std::vector<std::string>& allowed)
    {
        expr::Expr e;
        try {
            e = expr::parse(text);
        } catch (const ParseError& err) {
            throw ValidationError(where + ": " + err.what());
        }
        for (const auto& v : expr::variables(e))
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end())
                throw ValidationError(where + ": unknown variable '" + v + "'");
        return e;
    }

    static std::vector<std::string> string_list(const nlohmann::json& j, const std::string& where)
    {
        if (!j.is_array()) throw ValidationError("'" + where + "' must be an array");
        std::vector<std::string> out;
        for (const auto& item : j) {
            if (item.is_string())
                out.push_back(item.get<std::string>());
            else if (item.is_number()) {
                std::ostringstream os;
                os.precision(17);
                os << item.get<double>();
                out.push_back(os.str());
            } else
                throw ValidationError("'" + where + "' entries must be expression strings");
        }
        return out;
    }

    template <class T>
    void fill(const std::vector<expr::Compiled>& cells, T t, T s, MatT<T>& out) const
    {
        out.resize(m_, m_);
        const std::array<T, 2> v{t, s};
        const std::span<const T> vars(v);
        for (int r = 0; r < m_; ++r)
            for (int c = 0; c < m_; ++c) out(r, c) = cells[static_cast<std::size_t>(r * m_ + c)](vars);
    }

    ValidationCheck check_alpha_zero() const
    {
        ValidationCheck ck{"alpha(0)=0", true, 0.0, 0.0, ""};
        try {
            for (int i = 1; i < n_; ++i) ck.value = std::max(ck.value, std::abs(alpha(i, 0.0)));
            ck.pass = ck.value <= kZeroTol;
            if (!ck.pass) ck.message = "max |alpha_i(0)| exceeds 1e-12";
        } catch (const EvalError& e) {
            ck.pass = false;
            ck.message = e.what();
        }
        return ck;
    }

    // margin = min over samples of the smallest gap in 0 < alpha_1 < ... < alpha_{n-1} < t
    ValidationCheck check_ordering(int samples) const
    {
        ValidationCheck ck{"alpha ordering", true, 0.0, std::numeric_limits<double>::infinity(), ""};
        for (int k = 1; k <= samples; ++k) {
            const double t = T_ * k / samples;
            try {
                double prev = 0.0;
                for (int i = 1; i <= n_; ++i) {
                    const double a = alpha(i, t);
                    const double gap = a - prev;
                    if (gap < ck.value) {
                        ck.value = gap;
                        ck.worst_t = t;
                    }
                    prev = a;
                }
            } catch (const EvalError& e) {
                ck.pass = false;
                ck.worst_t = t;
                ck.message = e.what();
                return ck;
            }
        }
        if (n_ == 1) ck.value = 0.0;
        ck.pass = n_ == 1 || ck.value > 0.0;
        if (!ck.pass) ck.message = "boundary curves not strictly ordered inside (0,t)";
        return ck;
    }

    ValidationCheck check_derivative_ordering() const
    {
        ValidationCheck ck{"derivative ordering at 0", true, 0.0, 0.0, ""};
        if (n_ == 1) return ck;
        try {
            double prev = 0.0;
            ck.value = std::numeric_limits<double>::infinity();
            for (int i = 1; i <= n_; ++i) {
                const double d = alpha_prime(i, 0.0);
                ck.value = std::min(ck.value, d - prev);
                prev = d;
            }
            ck.pass = ck.value > 0.0;
            if (!ck.pass) ck.message = "need 0 < alpha_1'(0) < ... < alpha_{n-1}'(0) < 1";
        } catch (const EvalError& e) {
            ck.pass = false;
            ck.message = e.what();
        }
        return ck;
    }

    ValidationCheck check_f_zero() const
    {
        ValidationCheck ck{"f(0)=0", true, 0.0, 0.0, ""};
        try {
            ck.value = f(0.0).cwiseAbs().maxCoeff();
            ck.pass = ck.value <= kZeroTol;
            if (!ck.pass) ck.message = "max |f_r(0)| exceeds 1e-12";
        } catch (const EvalError& e) {
            ck.pass = false;
            ck.message = e.what();
        }
        return ck;
    }

    // value = min over samples of sigma_min / sigma_max of K_n(t,t)
    ValidationCheck check_invertible(int samples) const
    {
        ValidationCheck ck{"K_n(t,t) invertible", true, 0.0, std::numeric_limits<double>::infinity(), ""};
        for (int k = 0; k <= samples; ++k) {
            const double t = T_ * k / samples;
            try {
                const double rc = inverse_condition(kernel_piece(n_, t, t));
                if (rc < ck.value) {
                    ck.value = rc;
                    ck.worst_t = t;
                }
            } catch (const EvalError& e) {
                ck.pass = false;
                ck.worst_t = t;
                ck.message = e.what();
                return ck;
            }
        }
        ck.pass = ck.value > kRankTol;
        if (!ck.pass) ck.message = "K_n(t,t) numerically singular";
        return ck;
    }

    int m_;
    int n_;
    double T_;
    std::string name_;
    std::vector<BoundaryCurve> curves_;
    std::vector<KernelPiece> pieces_;
    std::vector<expr::Expr> f_;
    std::vector<expr::Expr> f_prime_;
    std::vector<expr::Compiled> f_c_;
    std::vector<expr::Compiled> f_prime_c_;
};

} // namespace volterra
