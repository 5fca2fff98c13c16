#include "nbi/samplers.hpp"

#include <atomic>
#include <cmath>

namespace nbi {

namespace {

std::atomic<std::uint64_t> next_kernel_id{1};

// The last two states evaluated on this thread. A step evaluates the current
// state and the proposal, and the next step starts from one of them.
struct EnergyCache {
    struct Entry {
        std::uint64_t owner = 0;
        Vector x, grad;
        double value = 0.0;
    };
    Entry slot[2];
    int next = 0;
};

thread_local EnergyCache energy_cache;

}  // namespace

double MalaKernel::energy_at(const Vector& x, Vector& grad) const {
    for (const auto& e : energy_cache.slot) {
        if (e.owner == id_ && e.x.size() == x.size() && e.x == x) {
            grad = e.grad;
            return e.value;
        }
    }
    const double u = cfg_.energy.value_and_gradient(x, grad);
    auto& e = energy_cache.slot[energy_cache.next];
    energy_cache.next ^= 1;
    e.owner = id_;
    e.x = x;
    e.grad = grad;
    e.value = u;
    return u;
}

MalaKernel::MalaKernel(MalaConfig cfg) : cfg_(std::move(cfg)), id_(next_kernel_id++) {
    if (!cfg_.energy) throw ValidationError("MALA needs an energy");
    if (!(cfg_.step_size > 0.0)) throw ValidationError("MALA step_size must be positive");
    if (!(cfg_.temperature > 0.0)) throw ValidationError("MALA temperature must be positive");
}

Vector MalaKernel::step(const Vector& x, Rng& rng) const {
    double unused;
    return step(x, rng, unused);
}

Vector MalaKernel::step(const Vector& x, Rng& rng, double& accept_prob) const {
    const double eta = cfg_.step_size;
    const double temp = cfg_.temperature;
    Vector grad_x;
    const double u_x = energy_at(x, grad_x);

    // x' = x - eta grad U(x) / temp + sqrt(2 eta) xi
    const Vector mean_fwd = x - eta * (grad_x / temp);
    Vector noise(x.size());
    rng.fill_normal(noise);
    const Vector proposal = mean_fwd + std::sqrt(2.0 * eta) * noise;
    if (!all_finite(proposal)) throw SimulationDiverged(1, -1, "non-finite MALA proposal");

    Vector grad_p;
    const double u_p = energy_at(proposal, grad_p);
    const Vector mean_bwd = proposal - eta * (grad_p / temp);

    // log q(a | b) = -|a - mean(b)|^2 / (4 eta) + const
    const double log_q_fwd = -(proposal - mean_fwd).squaredNorm() / (4.0 * eta);
    const double log_q_bwd = -(x - mean_bwd).squaredNorm() / (4.0 * eta);
    const double log_ratio = -(u_p - u_x) / temp + log_q_bwd - log_q_fwd;

    accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
    const double u = rng.uniform();
    if (std::isfinite(log_ratio) && u < accept_prob) return proposal;
    return x;
}

// ---------------------------------------------------------------------------

Vector random_unit_vector(Index dim, Rng& rng) {
    Vector v(dim);
    do {
        rng.fill_normal(v);
    } while (v.norm() == 0.0);
    return v / v.norm();
}

Vector random_unit_vector(Index dim, std::uint64_t seed) {
    Rng rng(seed);
    return random_unit_vector(dim, rng);
}

PhaseRetrievalKernel::PhaseRetrievalKernel(PhaseRetrievalConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dim < 1) throw ValidationError("phase retrieval dim must be positive");
    if (cfg_.truth.size() == 0) cfg_.truth = random_unit_vector(cfg_.dim, cfg_.seed);
    if (cfg_.truth.size() != cfg_.dim) throw DimensionMismatch(cfg_.dim, cfg_.truth.size(), "phase retrieval truth");
    if (std::abs(cfg_.truth.norm() - 1.0) > 1e-12) throw ValidationError("phase retrieval truth must be a unit vector");
    if (!(cfg_.learning_rate > 0.0)) throw ValidationError("phase retrieval learning_rate must be positive");
    if (!(cfg_.noise_sigma >= 0.0)) throw ValidationError("phase retrieval noise_sigma must be non-negative");
}

Vector PhaseRetrievalKernel::step(const Vector& x, Rng& rng) const {
    if (x.size() != cfg_.dim) throw DimensionMismatch(cfg_.dim, x.size(), "phase retrieval state");
    if (std::abs(x.norm() - 1.0) > 1e-9) throw ValidationError("phase retrieval state must lie on the unit sphere");
    Vector a(cfg_.dim);
    rng.fill_normal(a);
    const double eps = cfg_.noise_sigma * rng.normal();
    const double at = a.dot(cfg_.truth);
    const double y = at * at + eps;
    const double ax = a.dot(x);
    // Euclidean gradient of ((a^T x)^2 - y)^2, projected onto the tangent space.
    const Vector g = (4.0 * (ax * ax - y) * ax) * a;
    const Vector tangent = g - x.dot(g) * x;
    Vector next = x - cfg_.learning_rate * tangent;
    const double norm = next.norm();
    if (!(norm >= 1e-12) || !std::isfinite(norm)) throw SimulationDiverged(1, -1, "degenerate spherical retraction");
    return next / norm;
}

// ---------------------------------------------------------------------------

KernelBundle make_kernel(const nlohmann::json& config) {
    const std::string kind = config.at("kind").get<std::string>();
    KernelBundle bundle;
    bundle.config = config;
    if (kind == "mala") {
        MalaConfig cfg;
        cfg.energy = energy_from_json(config.at("energy"));
        cfg.step_size = config.value("step_size", cfg.step_size);
        cfg.temperature = config.value("temperature", cfg.temperature);
        bundle.energy = cfg.energy;
        bundle.kernel = std::make_shared<MalaKernel>(std::move(cfg));
    } else if (kind == "phase-retrieval") {
        PhaseRetrievalConfig cfg;
        cfg.dim = config.value("dim", cfg.dim);
        cfg.learning_rate = config.value("learning_rate", cfg.learning_rate);
        cfg.noise_sigma = config.value("noise_sigma", cfg.noise_sigma);
        cfg.seed = config.value("seed", cfg.seed);
        auto kernel = std::make_shared<PhaseRetrievalKernel>(std::move(cfg));
        bundle.phase_retrieval = std::make_shared<PhaseRetrievalConfig>(kernel->config());
        bundle.kernel = std::move(kernel);
    } else {
        throw ValidationError("unknown kernel kind '" + kind + "'");
    }
    return bundle;
}

}  // namespace nbi
