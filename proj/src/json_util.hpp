#pragma once

#include "nbi/core.hpp"

#include "json.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>
#include <vector>

namespace nbi::jsonutil {

/// Rejects keys outside `allowed`, so typos in manifests fail loudly.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
        if (!known) throw ValidationError(where + ": unknown key '" + item.key() + "'");
    }
}

inline Vector to_vector(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline nlohmann::json from_vector(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json from_matrix(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(from_vector(m.row(i).transpose()));
    return rows;
}

inline Matrix to_matrix(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const auto r = static_cast<Index>(rows.size());
    const Index c = r > 0 ? static_cast<Index>(rows.front().size()) : 0;
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
        if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != c)
            throw ValidationError("ragged matrix in JSON");
        for (Index k = 0; k < c; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    return m;
}

}  // namespace nbi::jsonutil
