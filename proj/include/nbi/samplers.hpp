#pragma once

#include "nbi/energy.hpp"
#include "nbi/process.hpp"

#include "json.hpp"

#include <memory>

namespace nbi {

struct MalaConfig {
    EnergySpec energy;
    double step_size = 0.01;   ///< eta
    double temperature = 1.0;  ///< target density exp(-U / temperature)
};

/// Metropolis-adjusted Langevin kernel. One step draws D normals in coordinate
/// order for the proposal, then exactly one uniform for the accept test.
class MalaKernel final : public MarkovKernel {
public:
    explicit MalaKernel(MalaConfig cfg);
    Index dimension() const override { return cfg_.energy.dimension(); }
    Vector step(const Vector& x, Rng& rng) const override;

    /// Same step, also reporting the acceptance probability min(1, exp(log_ratio)).
    Vector step(const Vector& x, Rng& rng, double& accept_prob) const;

    const MalaConfig& config() const { return cfg_; }

private:
    double energy_at(const Vector& x, Vector& grad) const;

    MalaConfig cfg_;
    std::uint64_t id_;  ///< tags this kernel's entries in the per-thread energy cache
};

struct PhaseRetrievalConfig {
    Index dim = 200;
    Vector truth;  ///< unit vector x*
    double learning_rate = 0.01;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;  ///< seed that generated `truth`
};

/// Unit vector drawn uniformly on the sphere from `seed`.
Vector random_unit_vector(Index dim, std::uint64_t seed);
Vector random_unit_vector(Index dim, Rng& rng);

/// Online spherical SGD on L(x; a, y) = ((a^T x)^2 - y)^2 with a fresh
/// observation y = (a^T x*)^2 + eps per step. Draw order: d normals for a, then
/// one normal for eps (always consumed, scaled by noise_sigma).
class PhaseRetrievalKernel final : public MarkovKernel {
public:
    explicit PhaseRetrievalKernel(PhaseRetrievalConfig cfg);
    Index dimension() const override { return cfg_.dim; }
    Vector step(const Vector& x, Rng& rng) const override;
    const PhaseRetrievalConfig& config() const { return cfg_; }

private:
    PhaseRetrievalConfig cfg_;
};

/// Kernel plus the landscape metadata needed for ground truth and plotting.
struct KernelBundle {
    std::shared_ptr<const MarkovKernel> kernel;
    nlohmann::json config;
    /// Set for "mala" kernels.
    EnergySpec energy;
    /// Set for "phase-retrieval" kernels.
    std::shared_ptr<const PhaseRetrievalConfig> phase_retrieval;
};

/// Registry keyed by `kind`:
///   {"kind": "mala", "energy": {...}, "step_size": eta, "temperature": 1}
///   {"kind": "phase-retrieval", "dim": d, "learning_rate": eta,
///    "noise_sigma": s, "seed": seed}
KernelBundle make_kernel(const nlohmann::json& config);

}  // namespace nbi
