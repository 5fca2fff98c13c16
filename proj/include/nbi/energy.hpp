#pragma once

#include "nbi/core.hpp"

#include "json.hpp"

#include <functional>
#include <memory>
#include <string>

namespace nbi {

enum class EnergyKind { double_ring, gaussian_mixture_2d, helix_3d, isotropic_gmm, augmented_embedding, custom };

std::string to_string(EnergyKind kind);
EnergyKind energy_kind_from_string(const std::string& name);

/// Two concentric radial Gaussian shells,
///   U(x) = -log[exp(-(|x| - r1)^2 / 2s^2) + exp(-(|x| - r2)^2 / 2s^2)].
struct DoubleRingParams {
    double r1 = 1.0;
    double r2 = 3.0;
    double sigma = 0.1;
    Index dim = 2;
};

/// Isotropic mixture with normalized components,
///   U(x) = -log sum_j w_j N(x; mu_j, s_j^2 I),
/// so a single standard Gaussian has U(mu) = d/2 log(2 pi).
struct MixtureParams {
    Matrix means;  ///< dim x k, one column per component
    Vector weights;
    Vector sigmas;
};

/// Two interleaved helical tubes c_+(s) = (a cos s, a sin s, b s) and
/// c_-(s) = (-a cos s, -a sin s, b s) for s in [0, 4 pi], plus a Gaussian at
/// each of the four curve ends:
///   U(x) = -log[ sum_tubes exp(-d_tube(x)^2 / 2 st^2)
///                + w_end sum_ends exp(-|x - e|^2 / 2 se^2) ]
/// with d_tube the distance to the nearest of `samples` curve points.
struct HelixParams {
    double radius = 1.0;  ///< a
    double pitch = 0.5;   ///< b
    double tube_sigma = 0.12;
    double end_sigma = 0.15;
    double end_weight = 1.0;
    Index samples = 400;
};

/// Orthonormal D x k basis of the structured subspace plus the width of the
/// isotropic Gaussian on its orthogonal complement.
struct EmbeddingSpec {
    Matrix basis;
    double orthogonal_sigma = 1.0;
    std::uint64_t seed = 0;

    Index ambient_dim() const { return basis.rows(); }
    Index intrinsic_dim() const { return basis.cols(); }
};

/// Random k-dimensional subspace of R^D from the thin QR factor of a seeded
/// Gaussian matrix.
EmbeddingSpec make_embedding(Index ambient_dim, Index intrinsic_dim, double orthogonal_sigma, std::uint64_t seed);

namespace detail {
class EnergyImpl;
}

/// Immutable energy landscape: value, analytic gradient, the analytic basin
/// label used as ground truth, and a JSON config that regenerates it.
class EnergySpec {
public:
    EnergySpec() = default;
    explicit EnergySpec(std::shared_ptr<const detail::EnergyImpl> impl, nlohmann::json config);

    EnergyKind kind() const;
    /// Input dimension (ambient dimension for embedded landscapes).
    Index dimension() const;
    Index intrinsic_dim() const;

    double value(const Vector& x) const;
    Vector gradient(const Vector& x) const;
    double value_and_gradient(const Vector& x, Vector& grad) const;

    /// Ground-truth basin of `x`: nearest ring, nearest component mean, nearest
    /// tube; embedded landscapes label the projection of `x` onto the subspace.
    Index basin_of(const Vector& x) const;
    Index num_basins() const;

    /// Coordinates in the structured subspace (identity unless embedded).
    Vector project(const Vector& x) const;

    const nlohmann::json& config() const { return config_; }
    /// Mixture parameters for the two mixture kinds, else nullptr.
    const MixtureParams* mixture() const;
    /// Embedding for augmented landscapes, else nullptr.
    const EmbeddingSpec* embedding() const;
    /// Base landscape for augmented landscapes, else nullptr.
    const EnergySpec* base() const;

    explicit operator bool() const { return impl_ != nullptr; }

private:
    std::shared_ptr<const detail::EnergyImpl> impl_;
    nlohmann::json config_;
};

EnergySpec make_double_ring(const DoubleRingParams& params = {});
EnergySpec make_helix(const HelixParams& params = {});

/// Mixture with explicit components. `kind` must be one of the two mixture kinds.
EnergySpec make_mixture(EnergyKind kind, MixtureParams params);

/// 2-d mixture with `num_components` equal-weight components of width `sigma`.
/// Means are uniform on [-extent, extent]^2, re-drawn until every pair is at
/// least `min_separation` apart.
EnergySpec make_gaussian_mixture_2d(Index num_components, double sigma, double extent, double min_separation,
                                    std::uint64_t seed);

/// Equal-weight mixture with means uniform on the sphere of `radius` in R^dim.
/// Draws are repeated until the minimum pairwise mean distance is at least
/// 4 * component_sigma.
struct IsotropicGmm {
    EnergySpec spec;
    Matrix means;  ///< dim x k
    double min_pairwise_distance = 0.0;
};
IsotropicGmm make_isotropic_gmm(Index num_components, Index dim, double radius, double component_sigma,
                                std::uint64_t seed);

/// U_aug(z) = U_low(B^T z) + |z - B B^T z|^2 / (2 s_perp^2).
EnergySpec augment_energy(const EnergySpec& low, const EmbeddingSpec& emb);

/// Landscape backed by a callable returning U(x) and, when `grad` is non-null,
/// writing the gradient. Kind `custom`; its config cannot be re-loaded.
using EnergyFn = std::function<double(const Vector& x, Vector* grad)>;
EnergySpec make_custom_energy(Index dim, EnergyFn fn);

/// Builds a landscape from {"kind", "params", "seed"}.
EnergySpec energy_from_json(const nlohmann::json& config);

}  // namespace nbi
