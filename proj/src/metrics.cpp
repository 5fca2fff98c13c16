#include "nbi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace nbi {

namespace {

struct Contingency {
    std::vector<std::int64_t> rows;   // cluster sizes of a
    std::vector<std::int64_t> cols;   // cluster sizes of b
    std::vector<std::int64_t> cells;  // nonzero n_ij
    std::int64_t n = 0;
};

Contingency contingency(const LabelVector& a, const LabelVector& b) {
    if (a.size() != b.size())
        throw DimensionMismatch(static_cast<Index>(a.size()), static_cast<Index>(b.size()), "label vectors");
    if (a.empty()) throw ValidationError("label vectors must be non-empty");
    std::map<Index, std::int64_t> ra, cb;
    std::map<std::pair<Index, Index>, std::int64_t> cell;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] < 0 || b[k] < 0) throw ValidationError("labels must be non-negative");
        ++ra[a[k]];
        ++cb[b[k]];
        ++cell[{a[k], b[k]}];
    }
    Contingency c;
    c.n = static_cast<std::int64_t>(a.size());
    for (const auto& [_, v] : ra) c.rows.push_back(v);
    for (const auto& [_, v] : cb) c.cols.push_back(v);
    for (const auto& [_, v] : cell) c.cells.push_back(v);
    return c;
}

__int128 pairs(std::int64_t x) { return static_cast<__int128>(x) * (x - 1) / 2; }

__int128 sum_pairs(const std::vector<std::int64_t>& v) {
    __int128 s = 0;
    for (auto x : v) s += pairs(x);
    return s;
}

bool same_partition(const Contingency& c) { return c.cells.size() == c.rows.size() && c.cells.size() == c.cols.size(); }

/// Sum of -p log p over cluster sizes, accumulated in sorted order so the
/// result depends only on the multiset of sizes.
double entropy(std::vector<std::int64_t> sizes, std::int64_t n) {
    std::sort(sizes.begin(), sizes.end());
    double h = 0.0;
    for (auto s : sizes) {
        const double p = static_cast<double>(s) / static_cast<double>(n);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

double ari(const LabelVector& a, const LabelVector& b) {
    const Contingency c = contingency(a, b);
    const __int128 total = pairs(c.n);
    const __int128 index = sum_pairs(c.cells);
    const __int128 sa = sum_pairs(c.rows);
    const __int128 sb = sum_pairs(c.cols);
    // ARI = (index - sa sb / total) / ((sa + sb) / 2 - sa sb / total), scaled by 2 total.
    const __int128 num = 2 * (total * index - sa * sb);
    const __int128 den = total * (sa + sb) - 2 * sa * sb;
    if (den == 0) return same_partition(c) ? 1.0 : 0.0;
    return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

double nmi(const LabelVector& a, const LabelVector& b) {
    const Contingency c = contingency(a, b);
    if (same_partition(c)) return 1.0;
    const double ha = entropy(c.rows, c.n);
    const double hb = entropy(c.cols, c.n);
    if (ha == 0.0 || hb == 0.0) return 0.0;

    // I = sum n_ij / N log(N n_ij / (a_i b_j)); terms are recomputed per cell
    // and summed in sorted order for exact symmetry.
    std::map<Index, std::int64_t> ra, cb;
    std::map<std::pair<Index, Index>, std::int64_t> cell;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ++ra[a[k]];
        ++cb[b[k]];
        ++cell[{a[k], b[k]}];
    }
    const auto n = static_cast<double>(c.n);
    std::vector<double> terms;
    terms.reserve(cell.size());
    for (const auto& [key, nij] : cell) {
        const double x = static_cast<double>(nij);
        const double denom = static_cast<double>(ra[key.first]) * static_cast<double>(cb[key.second]);
        terms.push_back(x / n * std::log(n * x / denom));
    }
    std::sort(terms.begin(), terms.end());
    const double mi = std::accumulate(terms.begin(), terms.end(), 0.0);
    return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

}  // namespace nbi
