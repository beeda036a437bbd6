// Observational dataset: covariates X, binary treatment T, factual outcome Y,
// plus whatever ground truth the source can provide (sampled potential
// outcomes, noiseless outcome means, true latent, propensities).
//
// CSV layout: header `x_0..x_{m-1},t,y[,y0,y1,propensity,w_0..w_{k-1}]`,
// floats written with 17 significant digits so a round trip is bit-exact.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "intactvae/tensor.hpp"

namespace intactvae {

struct Dataset {
    Tensor2 x;           // n x m
    std::vector<int> t;  // n, each 0 or 1
    Tensor2 y;           // n x d

    // Optional columns; empty (rows == 0) when absent.
    Tensor2 y0, y1;    // sampled potential outcomes
    Tensor2 mu0, mu1;  // noiseless potential-outcome means, when the source provides them
    Tensor2 w;         // true latent
    Vec propensity;    // p(t=1 | x)

    int n() const { return x.rows; }
    int dim_x() const { return x.cols; }
    int dim_y() const { return y.cols; }

    bool has_potential_outcomes() const { return y0.rows == n() && y1.rows == n() && n() > 0; }
    bool has_mu() const { return mu0.rows == n() && mu1.rows == n() && n() > 0; }
    bool has_latent() const { return w.rows == n() && n() > 0; }
    bool has_propensity() const { return static_cast<int>(propensity.size()) == n() && n() > 0; }
};

inline void validate(const Dataset& ds) {
    check(ds.x.rows == ds.y.rows && ds.x.rows == static_cast<int>(ds.t.size()),
          "Dataset: row count mismatch between x, y, t");
    check(all_finite(ds.x) && all_finite(ds.y), "Dataset: non-finite entries");
    for (int ti : ds.t) check(ti == 0 || ti == 1, "Dataset: t must be 0 or 1");
    if (ds.has_potential_outcomes()) {
        for (int i = 0; i < ds.n(); ++i)
            for (int j = 0; j < ds.dim_y(); ++j)
                check(ds.y(i, j) == (ds.t[i] == 0 ? ds.y0(i, j) : ds.y1(i, j)),
                      "Dataset: factual outcome disagrees with selected potential outcome at row " +
                          std::to_string(i));
    }
}

inline Dataset select_rows(const Dataset& ds, const std::vector<int>& idx) {
    Dataset out;
    const int k = static_cast<int>(idx.size());
    auto pick = [&](const Tensor2& src) {
        if (src.rows != ds.n() || src.rows == 0) return Tensor2();
        Tensor2 dst(k, src.cols);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < src.cols; ++j) dst(i, j) = src(idx[static_cast<size_t>(i)], j);
        return dst;
    };
    out.x = pick(ds.x);
    out.y = pick(ds.y);
    out.y0 = pick(ds.y0);
    out.y1 = pick(ds.y1);
    out.mu0 = pick(ds.mu0);
    out.mu1 = pick(ds.mu1);
    out.w = pick(ds.w);
    out.t.resize(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) out.t[static_cast<size_t>(i)] = ds.t[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    if (ds.has_propensity()) {
        out.propensity.resize(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i)
            out.propensity[static_cast<size_t>(i)] = ds.propensity[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }
    return out;
}

inline Dataset concat_datasets(const Dataset& a, const Dataset& b) {
    check(a.dim_x() == b.dim_x() && a.dim_y() == b.dim_y(), "concat_datasets: dim mismatch");
    Dataset out;
    auto join = [&](const Tensor2& ta, const Tensor2& tb) {
        if (ta.rows != a.n() || tb.rows != b.n() || ta.rows + tb.rows == 0) return Tensor2();
        Tensor2 dst(ta.rows + tb.rows, ta.cols);
        std::copy(ta.data.begin(), ta.data.end(), dst.data.begin());
        std::copy(tb.data.begin(), tb.data.end(), dst.data.begin() + static_cast<long>(ta.data.size()));
        return dst;
    };
    out.x = join(a.x, b.x);
    out.y = join(a.y, b.y);
    out.y0 = join(a.y0, b.y0);
    out.y1 = join(a.y1, b.y1);
    out.mu0 = join(a.mu0, b.mu0);
    out.mu1 = join(a.mu1, b.mu1);
    out.w = join(a.w, b.w);
    out.t = a.t;
    out.t.insert(out.t.end(), b.t.begin(), b.t.end());
    if (a.has_propensity() && b.has_propensity()) {
        out.propensity = a.propensity;
        out.propensity.insert(out.propensity.end(), b.propensity.begin(), b.propensity.end());
    }
    return out;
}

// 17-significant-digit decimal rendering; shortest form strtod maps back to
// the same bits.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
    check(ds.dim_y() == 1, "write_dataset_csv: only univariate outcomes are written");
    std::ofstream f(path);
    check(f.good(), "write_dataset_csv: cannot open " + path);
    for (int j = 0; j < ds.dim_x(); ++j) f << "x_" << j << ",";
    f << "t,y";
    if (ds.has_potential_outcomes()) f << ",y0,y1";
    if (ds.has_propensity()) f << ",propensity";
    if (ds.has_latent())
        for (int j = 0; j < ds.w.cols; ++j) f << ",w_" << j;
    f << "\n";
    for (int i = 0; i < ds.n(); ++i) {
        for (int j = 0; j < ds.dim_x(); ++j) f << format_double(ds.x(i, j)) << ",";
        f << ds.t[static_cast<size_t>(i)] << "," << format_double(ds.y(i, 0));
        if (ds.has_potential_outcomes())
            f << "," << format_double(ds.y0(i, 0)) << "," << format_double(ds.y1(i, 0));
        if (ds.has_propensity()) f << "," << format_double(ds.propensity[static_cast<size_t>(i)]);
        if (ds.has_latent())
            for (int j = 0; j < ds.w.cols; ++j) f << "," << format_double(ds.w(i, j));
        f << "\n";
    }
    check(f.good(), "write_dataset_csv: write failed for " + path);
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    check(end != s.c_str() && *end == '\0', "CSV: bad number '" + s + "' in " + where);
    return v;
}
}  // namespace detail

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "read_dataset_csv: cannot open " + path);
    std::string line;
    check(static_cast<bool>(std::getline(f, line)), "read_dataset_csv: empty file " + path);
    const std::vector<std::string> header = detail::split_csv_line(line);

    int m = 0;
    while (m < static_cast<int>(header.size()) && header[static_cast<size_t>(m)] == "x_" + std::to_string(m)) ++m;
    check(m > 0, "read_dataset_csv: header must start with x_0");
    size_t col = static_cast<size_t>(m);
    auto expect = [&](const std::string& name) {
        check(col < header.size() && header[col] == name,
              "read_dataset_csv: expected column '" + name + "' in " + path);
        ++col;
    };
    expect("t");
    expect("y");
    const bool has_po = col < header.size() && header[col] == "y0";
    if (has_po) {
        expect("y0");
        expect("y1");
    }
    const bool has_prop = col < header.size() && header[col] == "propensity";
    if (has_prop) expect("propensity");
    int dim_w = 0;
    while (col < header.size() && header[col] == "w_" + std::to_string(dim_w)) {
        ++dim_w;
        ++col;
    }
    check(col == header.size(), "read_dataset_csv: unrecognized trailing columns in " + path);

    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        check(cells.size() == header.size(),
              "read_dataset_csv: row " + std::to_string(rows.size()) + " has " +
                  std::to_string(cells.size()) + " cells, header has " +
                  std::to_string(header.size()));
        std::vector<double> vals;
        vals.reserve(cells.size());
        for (const auto& c : cells)
            vals.push_back(detail::parse_double(c, "row " + std::to_string(rows.size())));
        rows.push_back(std::move(vals));
    }

    const int n = static_cast<int>(rows.size());
    Dataset ds;
    ds.x = Tensor2(n, m);
    ds.y = Tensor2(n, 1);
    ds.t.resize(static_cast<size_t>(n));
    if (has_po) {
        ds.y0 = Tensor2(n, 1);
        ds.y1 = Tensor2(n, 1);
    }
    if (has_prop) ds.propensity.resize(static_cast<size_t>(n));
    if (dim_w > 0) ds.w = Tensor2(n, dim_w);
    for (int i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<size_t>(i)];
        size_t c = 0;
        for (int j = 0; j < m; ++j) ds.x(i, j) = r[c++];
        const double traw = r[c++];
        check(traw == 0.0 || traw == 1.0, "read_dataset_csv: t not in {0,1} at row " + std::to_string(i));
        ds.t[static_cast<size_t>(i)] = static_cast<int>(traw);
        ds.y(i, 0) = r[c++];
        if (has_po) {
            ds.y0(i, 0) = r[c++];
            ds.y1(i, 0) = r[c++];
        }
        if (has_prop) ds.propensity[static_cast<size_t>(i)] = r[c++];
        for (int j = 0; j < dim_w; ++j) ds.w(i, j) = r[c++];
    }
    validate(ds);
    return ds;
}

}  // namespace intactvae
