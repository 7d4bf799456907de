#pragma once

// Grid functions: ascending nodes with an m-vector per node, read as the
// piecewise-linear interpolant. CSV serialization with 17 significant digits.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "volterra/errors.hpp"
#include "volterra/linalg.hpp"

namespace volterra {

struct IterationStats {
    int iterations = 0;
    double last_diff = 0.0;
    bool converged = false;
    bool contractive = true;     ///< false when successive differences stop shrinking
    std::vector<double> ratios;  ///< diff_k / diff_{k-1}
};

/// Index j with nodes[j] <= s < nodes[j+1] and the weight theta of nodes[j+1].
/// Values below nodes.front() or above nodes.back() clamp to the end nodes.
inline std::pair<std::size_t, double> bracket(const std::vector<double>& nodes, std::size_t count, double s)
{
    if (count == 1 || s <= nodes[0]) return {0, 0.0};
    if (s >= nodes[count - 1]) return {count - 2, 1.0};
    const auto it = std::upper_bound(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(count), s);
    const std::size_t j = static_cast<std::size_t>(it - nodes.begin()) - 1;
    const double theta = (s - nodes[j]) / (nodes[j + 1] - nodes[j]);
    return {j, theta};
}

struct GridSolution {
    std::vector<double> nodes;
    std::vector<Vec> values;
    std::vector<std::pair<double, double>> intervals; ///< step intervals, when produced by the step method
    double h = 0.0;
    double epsilon = 0.0;
    double tol = 0.0;
    std::vector<IterationStats> stats; ///< one entry per interval

    int m() const { return values.empty() ? 0 : static_cast<int>(values.front().size()); }
    std::size_t size() const { return nodes.size(); }

    /// Piecewise-linear interpolant; constant beyond the first and last node.
    Vec at(double t) const
    {
        if (nodes.empty()) throw ValidationError("empty grid solution");
        const auto [j, theta] = bracket(nodes, nodes.size(), t);
        if (nodes.size() == 1) return values[0];
        return (1.0 - theta) * values[j] + theta * values[j + 1];
    }

    void append(double t, const Vec& v)
    {
        nodes.push_back(t);
        values.push_back(v);
    }
};

inline std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);
    return buf;
}

/// Header `t,x1,...,xm`, one row per node. `comments` become leading `# ` lines.
inline void write_csv(std::ostream& out, const GridSolution& sol, const std::vector<std::string>& comments = {})
{
    for (const auto& c : comments) out << "# " << c << '\n';
    out << 't';
    for (int r = 0; r < sol.m(); ++r) out << ",x" << (r + 1);
    out << '\n';
    for (std::size_t k = 0; k < sol.nodes.size(); ++k) {
        out << format_real(sol.nodes[k]);
        for (int r = 0; r < sol.m(); ++r) out << ',' << format_real(sol.values[k](r));
        out << '\n';
    }
}

inline GridSolution read_csv(std::istream& in)
{
    GridSolution sol;
    std::string line;
    int m = -1;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (m < 0) {
            if (cells.size() < 2 || cells[0] != "t") throw ValidationError("CSV header must be t,x1,...,xm");
            for (std::size_t r = 1; r < cells.size(); ++r)
                if (cells[r] != "x" + std::to_string(r)) throw ValidationError("CSV header must be t,x1,...,xm");
            m = static_cast<int>(cells.size()) - 1;
            continue;
        }
        if (static_cast<int>(cells.size()) != m + 1)
            throw ValidationError("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(m + 1) + " fields");
        Vec v(m);
        double t = 0.0;
        try {
            std::size_t used = 0;
            t = std::stod(cells[0], &used);
            for (int r = 0; r < m; ++r) v(r) = std::stod(cells[static_cast<std::size_t>(r + 1)]);
        } catch (const std::exception&) {
            throw ValidationError("CSV line " + std::to_string(lineno) + ": malformed number");
        }
        if (!sol.nodes.empty() && !(t > sol.nodes.back()))
            throw ValidationError("CSV line " + std::to_string(lineno) + ": nodes must be strictly ascending");
        sol.append(t, v);
    }
    if (m < 0) throw ValidationError("CSV has no header");
    if (sol.nodes.empty()) throw ValidationError("CSV has no data rows");
    return sol;
}

inline GridSolution read_csv_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open CSV file '" + path + "'");
    return read_csv(in);
}

} // namespace volterra
