#include "nbi/energy.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace nbi {

using nlohmann::json;

std::string to_string(EnergyKind kind) {
    switch (kind) {
        case EnergyKind::double_ring: return "double-ring";
        case EnergyKind::gaussian_mixture_2d: return "gaussian-mixture-2d";
        case EnergyKind::helix_3d: return "helix-3d";
        case EnergyKind::isotropic_gmm: return "isotropic-gmm";
        case EnergyKind::augmented_embedding: return "augmented-embedding";
        case EnergyKind::custom: return "custom";
    }
    return "unknown";
}

EnergyKind energy_kind_from_string(const std::string& name) {
    for (auto k : {EnergyKind::double_ring, EnergyKind::gaussian_mixture_2d, EnergyKind::helix_3d,
                   EnergyKind::isotropic_gmm, EnergyKind::augmented_embedding}) {
        if (to_string(k) == name) return k;
    }
    throw ValidationError("unknown energy kind '" + name + "'");
}

namespace detail {

class EnergyImpl {
public:
    virtual ~EnergyImpl() = default;
    virtual EnergyKind kind() const = 0;
    virtual Index dimension() const = 0;
    virtual Index intrinsic_dim() const { return dimension(); }
    virtual double value_and_gradient(const Vector& x, Vector* grad) const = 0;
    virtual Index basin_of(const Vector& x) const = 0;
    virtual Index num_basins() const = 0;
    virtual Vector project(const Vector& x) const { return x; }
    virtual const MixtureParams* mixture() const { return nullptr; }
    virtual const EmbeddingSpec* embedding() const { return nullptr; }
    virtual const EnergySpec* base() const { return nullptr; }
};

}  // namespace detail

namespace {

/// -log sum_k exp(-e_k) with softmax weights written to `weights`.
double neg_log_sum_exp(const std::vector<double>& energies, std::vector<double>& weights) {
    double lo = std::numeric_limits<double>::infinity();
    for (double e : energies) lo = std::min(lo, e);
    weights.resize(energies.size());
    double total = 0.0;
    for (std::size_t k = 0; k < energies.size(); ++k) {
        weights[k] = std::exp(lo - energies[k]);
        total += weights[k];
    }
    for (double& w : weights) w /= total;
    return lo - std::log(total);
}

class DoubleRing final : public detail::EnergyImpl {
public:
    explicit DoubleRing(const DoubleRingParams& p) : p_(p) {}
    EnergyKind kind() const override { return EnergyKind::double_ring; }
    Index dimension() const override { return p_.dim; }

    double value_and_gradient(const Vector& x, Vector* grad) const override {
        const double r = x.norm();
        const double inv = 1.0 / (2.0 * p_.sigma * p_.sigma);
        const double e1 = (r - p_.r1) * (r - p_.r1) * inv;
        const double e2 = (r - p_.r2) * (r - p_.r2) * inv;
        std::vector<double> w;
        const double u = neg_log_sum_exp({e1, e2}, w);
        if (grad) {
            const double s2 = p_.sigma * p_.sigma;
            const double dudr = w[0] * (r - p_.r1) / s2 + w[1] * (r - p_.r2) / s2;
            if (r > 0.0) {
                *grad = (dudr / r) * x;
            } else {
                grad->setZero(x.size());
            }
        }
        return u;
    }

    Index basin_of(const Vector& x) const override {
        const double r = x.norm();
        return std::abs(r - p_.r1) <= std::abs(r - p_.r2) ? 0 : 1;
    }
    Index num_basins() const override { return 2; }

private:
    DoubleRingParams p_;
};

class Mixture final : public detail::EnergyImpl {
public:
    Mixture(EnergyKind kind, MixtureParams p) : kind_(kind), p_(std::move(p)) {
        const Index k = p_.means.cols();
        const double d = static_cast<double>(p_.means.rows());
        log_norm_.resize(static_cast<std::size_t>(k));
        for (Index j = 0; j < k; ++j) {
            const double s2 = p_.sigmas(j) * p_.sigmas(j);
            log_norm_[static_cast<std::size_t>(j)] =
                -std::log(p_.weights(j)) + 0.5 * d * std::log(2.0 * std::numbers::pi * s2);
        }
    }
    EnergyKind kind() const override { return kind_; }
    Index dimension() const override { return p_.means.rows(); }

    double value_and_gradient(const Vector& x, Vector* grad) const override {
        const Index k = p_.means.cols();
        std::vector<double> e(static_cast<std::size_t>(k));
        for (Index j = 0; j < k; ++j) {
            const double s2 = p_.sigmas(j) * p_.sigmas(j);
            e[static_cast<std::size_t>(j)] =
                (x - p_.means.col(j)).squaredNorm() / (2.0 * s2) + log_norm_[static_cast<std::size_t>(j)];
        }
        std::vector<double> w;
        const double u = neg_log_sum_exp(e, w);
        if (grad) {
            grad->setZero(x.size());
            for (Index j = 0; j < k; ++j) {
                const double wj = w[static_cast<std::size_t>(j)];
                if (wj == 0.0) continue;
                *grad += (wj / (p_.sigmas(j) * p_.sigmas(j))) * (x - p_.means.col(j));
            }
        }
        return u;
    }

    Index basin_of(const Vector& x) const override {
        Index best = 0;
        (p_.means.colwise() - x).colwise().squaredNorm().minCoeff(&best);
        return best;
    }
    Index num_basins() const override { return p_.means.cols(); }
    const MixtureParams* mixture() const override { return &p_; }

private:
    EnergyKind kind_;
    MixtureParams p_;
    std::vector<double> log_norm_;
};

class Helix final : public detail::EnergyImpl {
public:
    explicit Helix(const HelixParams& p) : p_(p) {
        const double s_max = 4.0 * std::numbers::pi;
        for (int sign : {1, -1}) {
            Matrix pts(p_.samples, 3);
            for (Index i = 0; i < p_.samples; ++i) {
                const double s = s_max * static_cast<double>(i) / static_cast<double>(p_.samples - 1);
                pts.row(i) << sign * p_.radius * std::cos(s), sign * p_.radius * std::sin(s), p_.pitch * s;
            }
            tubes_.push_back(std::move(pts));
        }
        for (const auto& t : tubes_) {
            ends_.push_back(t.row(0).transpose());
            ends_.push_back(t.row(p_.samples - 1).transpose());
        }
    }
    EnergyKind kind() const override { return EnergyKind::helix_3d; }
    Index dimension() const override { return 3; }

    double value_and_gradient(const Vector& x, Vector* grad) const override {
        const double st2 = p_.tube_sigma * p_.tube_sigma;
        const double se2 = p_.end_sigma * p_.end_sigma;
        std::vector<double> e(6);
        Eigen::Matrix<double, 3, 6> dirs;  // gradient of each term's energy
        for (std::size_t t = 0; t < 2; ++t) {
            const auto [nearest, d2] = nearest_sample(t, x);
            e[t] = d2 / (2.0 * st2);
            dirs.col(static_cast<Index>(t)) = (x - tubes_[t].row(nearest).transpose()) / st2;
        }
        for (std::size_t c = 0; c < 4; ++c) {
            e[2 + c] = (x - ends_[c]).squaredNorm() / (2.0 * se2) - std::log(p_.end_weight);
            dirs.col(static_cast<Index>(2 + c)) = (x - ends_[c]) / se2;
        }
        std::vector<double> w;
        const double u = neg_log_sum_exp(e, w);
        if (grad) {
            grad->setZero(3);
            for (Index k = 0; k < 6; ++k) *grad += w[static_cast<std::size_t>(k)] * dirs.col(k);
        }
        return u;
    }

    Index basin_of(const Vector& x) const override {
        return nearest_sample(0, x).second <= nearest_sample(1, x).second ? 0 : 1;
    }
    Index num_basins() const override { return 2; }

private:
    /// Index and squared distance of the closest curve sample; ties go to the
    /// lowest index. Sample heights increase with the index when pitch > 0,
    /// so |z - z_i| bounds the distance and the scan stops once it exceeds the
    /// best match, starting from the sample at the matching winding angle.
    std::pair<Index, double> nearest_sample(std::size_t tube, const Vector& x) const {
        const Matrix& pts = tubes_[tube];
        const Index n = pts.rows();
        auto dist2 = [&](Index i) {
            const double dx = pts(i, 0) - x(0), dy = pts(i, 1) - x(1), dz = pts(i, 2) - x(2);
            return dx * dx + dy * dy + dz * dz;
        };
        if (!(p_.pitch > 0.0)) {
            Index arg = 0;
            double best = dist2(0);
            for (Index i = 1; i < n; ++i)
                if (const double d = dist2(i); d < best) best = d, arg = i;
            return {arg, best};
        }
        const double two_pi = 2.0 * std::numbers::pi, s_max = 2.0 * two_pi;
        const double sign = tube == 0 ? 1.0 : -1.0;
        const double phi = std::atan2(sign * x(1), sign * x(0));
        const double s0 = std::clamp(phi + two_pi * std::round((x(2) / p_.pitch - phi) / two_pi), 0.0, s_max);
        Index arg = std::clamp<Index>(std::llround(s0 / s_max * static_cast<double>(n - 1)), 0, n - 1);
        double best = dist2(arg);
        const Index start = arg;
        auto visit = [&](Index i) {
            const double d = dist2(i);
            if (d < best || (d == best && i < arg)) best = d, arg = i;
        };
        for (Index i = start + 1; i < n; ++i) {
            const double gap = pts(i, 2) - x(2);
            if (gap >= 0.0 && gap * gap > best) break;
            visit(i);
        }
        for (Index i = start - 1; i >= 0; --i) {
            const double gap = x(2) - pts(i, 2);
            if (gap >= 0.0 && gap * gap > best) break;
            visit(i);
        }
        return {arg, best};
    }

    HelixParams p_;
    std::vector<Matrix> tubes_;
    std::vector<Vector> ends_;
};

class Custom final : public detail::EnergyImpl {
public:
    Custom(Index dim, EnergyFn fn) : dim_(dim), fn_(std::move(fn)) {}
    EnergyKind kind() const override { return EnergyKind::custom; }
    Index dimension() const override { return dim_; }
    double value_and_gradient(const Vector& x, Vector* grad) const override { return fn_(x, grad); }
    Index basin_of(const Vector&) const override { return 0; }
    Index num_basins() const override { return 1; }

private:
    Index dim_;
    EnergyFn fn_;
};

class Augmented final : public detail::EnergyImpl {
public:
    Augmented(EnergySpec base, EmbeddingSpec emb) : base_(std::move(base)), emb_(std::move(emb)) {}
    EnergyKind kind() const override { return EnergyKind::augmented_embedding; }
    Index dimension() const override { return emb_.ambient_dim(); }
    Index intrinsic_dim() const override { return base_.intrinsic_dim(); }

    double value_and_gradient(const Vector& z, Vector* grad) const override {
        const Vector u = emb_.basis.transpose() * z;
        const Vector orth = z - emb_.basis * u;
        const double s2 = emb_.orthogonal_sigma * emb_.orthogonal_sigma;
        double value;
        if (grad) {
            Vector g_low;
            value = base_.value_and_gradient(u, g_low);
            *grad = emb_.basis * g_low + orth / s2;
        } else {
            value = base_.value(u);
        }
        return value + orth.squaredNorm() / (2.0 * s2);
    }

    Index basin_of(const Vector& z) const override { return base_.basin_of(project(z)); }
    Index num_basins() const override { return base_.num_basins(); }
    Vector project(const Vector& z) const override { return base_.project(emb_.basis.transpose() * z); }
    const MixtureParams* mixture() const override { return base_.mixture(); }
    const EmbeddingSpec* embedding() const override { return &emb_; }
    const EnergySpec* base() const override { return &base_; }

private:
    EnergySpec base_;
    EmbeddingSpec emb_;
};

}  // namespace

// ---------------------------------------------------------------------------

EnergySpec::EnergySpec(std::shared_ptr<const detail::EnergyImpl> impl, json config)
    : impl_(std::move(impl)), config_(std::move(config)) {}

EnergyKind EnergySpec::kind() const { return impl_->kind(); }
Index EnergySpec::dimension() const { return impl_->dimension(); }
Index EnergySpec::intrinsic_dim() const { return impl_->intrinsic_dim(); }

double EnergySpec::value(const Vector& x) const {
    if (x.size() != dimension()) throw DimensionMismatch(dimension(), x.size(), "energy value");
    return impl_->value_and_gradient(x, nullptr);
}

Vector EnergySpec::gradient(const Vector& x) const {
    Vector g;
    value_and_gradient(x, g);
    return g;
}

double EnergySpec::value_and_gradient(const Vector& x, Vector& grad) const {
    if (x.size() != dimension()) throw DimensionMismatch(dimension(), x.size(), "energy gradient");
    return impl_->value_and_gradient(x, &grad);
}

Index EnergySpec::basin_of(const Vector& x) const {
    if (x.size() != dimension()) throw DimensionMismatch(dimension(), x.size(), "basin label");
    return impl_->basin_of(x);
}
Index EnergySpec::num_basins() const { return impl_->num_basins(); }

Vector EnergySpec::project(const Vector& x) const {
    if (x.size() != dimension()) throw DimensionMismatch(dimension(), x.size(), "projection");
    return impl_->project(x);
}

const MixtureParams* EnergySpec::mixture() const { return impl_->mixture(); }
const EmbeddingSpec* EnergySpec::embedding() const { return impl_->embedding(); }
const EnergySpec* EnergySpec::base() const { return impl_->base(); }

// ---------------------------------------------------------------------------

EmbeddingSpec make_embedding(Index ambient_dim, Index intrinsic_dim, double orthogonal_sigma, std::uint64_t seed) {
    if (intrinsic_dim < 1 || ambient_dim < intrinsic_dim)
        throw ValidationError("embedding needs 1 <= intrinsic_dim <= ambient_dim");
    if (!(orthogonal_sigma > 0.0)) throw ValidationError("orthogonal_sigma must be positive");
    Rng rng(seed);
    Matrix g(ambient_dim, intrinsic_dim);
    for (Index c = 0; c < intrinsic_dim; ++c)
        for (Index r = 0; r < ambient_dim; ++r) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    EmbeddingSpec emb;
    emb.basis = qr.householderQ() * Matrix::Identity(ambient_dim, intrinsic_dim);
    emb.orthogonal_sigma = orthogonal_sigma;
    emb.seed = seed;
    return emb;
}

EnergySpec make_double_ring(const DoubleRingParams& p) {
    if (!(p.sigma > 0.0) || p.dim < 1 || !(p.r1 >= 0.0) || !(p.r2 >= 0.0))
        throw ValidationError("double-ring needs sigma > 0, dim >= 1 and non-negative radii");
    json cfg = {{"kind", "double-ring"},
                {"params", {{"r1", p.r1}, {"r2", p.r2}, {"sigma", p.sigma}, {"dim", p.dim}}}};
    return EnergySpec(std::make_shared<DoubleRing>(p), std::move(cfg));
}

EnergySpec make_helix(const HelixParams& p) {
    if (!(p.radius > 0.0) || !(p.tube_sigma > 0.0) || !(p.end_sigma > 0.0) || !(p.end_weight > 0.0) ||
        p.samples < 2)
        throw ValidationError("helix parameters must be positive with at least 2 samples");
    json cfg = {{"kind", "helix-3d"},
                {"params",
                 {{"radius", p.radius},
                  {"pitch", p.pitch},
                  {"tube_sigma", p.tube_sigma},
                  {"end_sigma", p.end_sigma},
                  {"end_weight", p.end_weight},
                  {"samples", p.samples}}}};
    return EnergySpec(std::make_shared<Helix>(p), std::move(cfg));
}

EnergySpec make_mixture(EnergyKind kind, MixtureParams p) {
    if (kind != EnergyKind::gaussian_mixture_2d && kind != EnergyKind::isotropic_gmm)
        throw ValidationError("make_mixture needs a mixture kind");
    const Index k = p.means.cols();
    if (k < 1 || p.means.rows() < 1) throw ValidationError("mixture needs at least one component");
    if (p.weights.size() == 0) p.weights = Vector::Constant(k, 1.0 / static_cast<double>(k));
    if (p.weights.size() != k || p.sigmas.size() != k)
        throw ValidationError("mixture weights and sigmas must have one entry per component");
    if ((p.weights.array() <= 0.0).any() || (p.sigmas.array() <= 0.0).any())
        throw ValidationError("mixture weights and sigmas must be positive");
    p.weights /= p.weights.sum();
    json means = json::array();
    for (Index j = 0; j < k; ++j) means.push_back(std::vector<double>(p.means.col(j).data(), p.means.col(j).data() + p.means.rows()));
    json cfg = {{"kind", to_string(kind)},
                {"params",
                 {{"means", means},
                  {"weights", std::vector<double>(p.weights.data(), p.weights.data() + k)},
                  {"sigmas", std::vector<double>(p.sigmas.data(), p.sigmas.data() + k)}}}};
    return EnergySpec(std::make_shared<Mixture>(kind, std::move(p)), std::move(cfg));
}

namespace {

double min_pairwise_distance(const Matrix& means) {
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < means.cols(); ++i)
        for (Index j = i + 1; j < means.cols(); ++j) best = std::min(best, (means.col(i) - means.col(j)).norm());
    return best;
}

constexpr int kMaxRedraws = 10000;

}  // namespace

EnergySpec make_gaussian_mixture_2d(Index num_components, double sigma, double extent, double min_separation,
                                    std::uint64_t seed) {
    if (num_components < 1 || !(sigma > 0.0) || !(extent > 0.0))
        throw ValidationError("gaussian-mixture-2d needs num_components >= 1, sigma > 0, extent > 0");
    Rng rng(seed);
    MixtureParams p;
    p.means.resize(2, num_components);
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw ValidationError("could not place mixture means with the requested separation");
        for (Index j = 0; j < num_components; ++j)
            for (Index d = 0; d < 2; ++d) p.means(d, j) = extent * (2.0 * rng.uniform() - 1.0);
        if (min_pairwise_distance(p.means) >= min_separation) break;
    }
    p.sigmas = Vector::Constant(num_components, sigma);
    p.weights = Vector::Constant(num_components, 1.0 / static_cast<double>(num_components));
    auto impl = std::make_shared<Mixture>(EnergyKind::gaussian_mixture_2d, std::move(p));
    json cfg = {{"kind", "gaussian-mixture-2d"},
                {"params",
                 {{"num_components", num_components},
                  {"sigma", sigma},
                  {"extent", extent},
                  {"min_separation", min_separation}}},
                {"seed", seed}};
    return EnergySpec(std::move(impl), std::move(cfg));
}

IsotropicGmm make_isotropic_gmm(Index num_components, Index dim, double radius, double component_sigma,
                                std::uint64_t seed) {
    if (num_components < 1 || dim < 1 || !(radius > 0.0) || !(component_sigma > 0.0))
        throw ValidationError("isotropic-gmm needs num_components >= 1, dim >= 1, radius > 0, sigma > 0");
    Rng rng(seed);
    IsotropicGmm out;
    out.means.resize(dim, num_components);
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRedraws) throw ValidationError("could not place well-separated mixture means");
        for (Index j = 0; j < num_components; ++j) {
            Vector v(dim);
            rng.fill_normal(v);
            out.means.col(j) = radius * v / v.norm();
        }
        out.min_pairwise_distance = min_pairwise_distance(out.means);
        if (num_components == 1 || out.min_pairwise_distance >= 4.0 * component_sigma) break;
    }
    MixtureParams p;
    p.means = out.means;
    p.sigmas = Vector::Constant(num_components, component_sigma);
    p.weights = Vector::Constant(num_components, 1.0 / static_cast<double>(num_components));
    json cfg = {{"kind", "isotropic-gmm"},
                {"params",
                 {{"num_components", num_components},
                  {"dim", dim},
                  {"radius", radius},
                  {"component_sigma", component_sigma}}},
                {"seed", seed}};
    out.spec = EnergySpec(std::make_shared<Mixture>(EnergyKind::isotropic_gmm, std::move(p)), std::move(cfg));
    return out;
}

EnergySpec augment_energy(const EnergySpec& low, const EmbeddingSpec& emb) {
    if (low.dimension() != emb.intrinsic_dim())
        throw DimensionMismatch(emb.intrinsic_dim(), low.dimension(), "augment_energy base landscape");
    const Matrix gram = emb.basis.transpose() * emb.basis;
    if ((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() > 1e-10)
        throw ValidationError("embedding basis is not orthonormal");
    json cfg = {{"kind", "augmented-embedding"},
                {"params",
                 {{"base", low.config()},
                  {"ambient_dim", emb.ambient_dim()},
                  {"orthogonal_sigma", emb.orthogonal_sigma}}},
                {"seed", emb.seed}};
    return EnergySpec(std::make_shared<Augmented>(low, emb), std::move(cfg));
}

EnergySpec make_custom_energy(Index dim, EnergyFn fn) {
    if (dim < 1 || !fn) throw ValidationError("custom energy needs dim >= 1 and a callable");
    return EnergySpec(std::make_shared<Custom>(dim, std::move(fn)), json{{"kind", "custom"}});
}

EnergySpec energy_from_json(const json& config) {
    const auto kind = energy_kind_from_string(config.at("kind").get<std::string>());
    const json params = config.value("params", json::object());
    const std::uint64_t seed = config.value("seed", std::uint64_t{0});
    switch (kind) {
        case EnergyKind::double_ring: {
            DoubleRingParams p;
            p.r1 = params.value("r1", p.r1);
            p.r2 = params.value("r2", p.r2);
            p.sigma = params.value("sigma", p.sigma);
            p.dim = params.value("dim", p.dim);
            return make_double_ring(p);
        }
        case EnergyKind::helix_3d: {
            HelixParams p;
            p.radius = params.value("radius", p.radius);
            p.pitch = params.value("pitch", p.pitch);
            p.tube_sigma = params.value("tube_sigma", p.tube_sigma);
            p.end_sigma = params.value("end_sigma", p.end_sigma);
            p.end_weight = params.value("end_weight", p.end_weight);
            p.samples = params.value("samples", p.samples);
            return make_helix(p);
        }
        case EnergyKind::gaussian_mixture_2d:
        case EnergyKind::isotropic_gmm: {
            if (params.contains("means")) {
                const auto rows = params.at("means").get<std::vector<std::vector<double>>>();
                MixtureParams p;
                const auto k = static_cast<Index>(rows.size());
                const Index dim = k > 0 ? static_cast<Index>(rows.front().size()) : 0;
                p.means.resize(dim, k);
                for (Index j = 0; j < k; ++j) {
                    if (static_cast<Index>(rows[static_cast<std::size_t>(j)].size()) != dim)
                        throw ValidationError("mixture means must share one dimension");
                    for (Index d = 0; d < dim; ++d) p.means(d, j) = rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
                }
                const auto sig = params.at("sigmas").get<std::vector<double>>();
                p.sigmas = Eigen::Map<const Vector>(sig.data(), static_cast<Index>(sig.size()));
                if (params.contains("weights")) {
                    const auto w = params.at("weights").get<std::vector<double>>();
                    p.weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
                }
                return make_mixture(kind, std::move(p));
            }
            if (kind == EnergyKind::gaussian_mixture_2d) {
                return make_gaussian_mixture_2d(params.value("num_components", Index{3}), params.value("sigma", 0.4),
                                                params.value("extent", 4.0), params.value("min_separation", 4.0),
                                                seed);
            }
            return make_isotropic_gmm(params.at("num_components").get<Index>(), params.value("dim", Index{100}),
                                      params.value("radius", 10.0), params.value("component_sigma", 1.0), seed)
                .spec;
        }
        case EnergyKind::custom: throw ValidationError("custom energies cannot be loaded from config");
        case EnergyKind::augmented_embedding: {
            EnergySpec base = energy_from_json(params.at("base"));
            const auto emb = make_embedding(params.at("ambient_dim").get<Index>(), base.dimension(),
                                            params.value("orthogonal_sigma", 1.0), seed);
            return augment_energy(base, emb);
        }
    }
    throw ValidationError("unhandled energy kind");
}

}  // namespace nbi
