#include "nbi/nn.hpp"

#include "byte_io.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <tuple>

namespace nbi {

Index MlpParams::num_parameters() const {
    Index n = 0;
    for (const auto* stack : {&trunk, &head})
        for (const auto& l : *stack) n += l.weight.size() + l.bias.size();
    return n;
}

Vector MlpParams::flatten() const {
    Vector flat(num_parameters());
    Index k = 0;
    for (const auto* stack : {&trunk, &head}) {
        for (const auto& l : *stack) {
            flat.segment(k, l.weight.size()) = l.weight.reshaped();
            k += l.weight.size();
            flat.segment(k, l.bias.size()) = l.bias;
            k += l.bias.size();
        }
    }
    return flat;
}

void MlpParams::unflatten(const Vector& flat) {
    if (flat.size() != num_parameters()) throw DimensionMismatch(num_parameters(), flat.size(), "unflatten");
    Index k = 0;
    for (auto* stack : {&trunk, &head}) {
        for (auto& l : *stack) {
            l.weight.reshaped() = flat.segment(k, l.weight.size());
            k += l.weight.size();
            l.bias = flat.segment(k, l.bias.size());
            k += l.bias.size();
        }
    }
}

MlpParams MlpParams::zeros_like() const {
    MlpParams z = *this;
    for (auto* stack : {&z.trunk, &z.head}) {
        for (auto& l : *stack) {
            l.weight.setZero();
            l.bias.setZero();
        }
    }
    return z;
}

namespace {

std::vector<DenseLayer> make_stack(const std::vector<Index>& dims, Rng& rng) {
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
        layer.weight.resize(dims[l + 1], dims[l]);
        for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = scale * rng.normal();
        layer.bias = Vector::Zero(dims[l + 1]);
        layers.push_back(std::move(layer));
    }
    return layers;
}

}  // namespace

MlpParams init_siamese(Index input_dim, const std::vector<Index>& trunk_hidden, Index embedding_dim,
                       const std::vector<Index>& head_hidden, std::uint64_t seed) {
    if (input_dim < 1 || embedding_dim < 1) throw ValidationError("network dimensions must be positive");
    for (Index h : trunk_hidden)
        if (h < 1) throw ValidationError("hidden widths must be positive");
    for (Index h : head_hidden)
        if (h < 1) throw ValidationError("hidden widths must be positive");
    MlpParams p;
    p.trunk_dims.push_back(input_dim);
    p.trunk_dims.insert(p.trunk_dims.end(), trunk_hidden.begin(), trunk_hidden.end());
    p.trunk_dims.push_back(embedding_dim);
    p.head_dims.push_back(embedding_dim);
    p.head_dims.insert(p.head_dims.end(), head_hidden.begin(), head_hidden.end());
    p.head_dims.push_back(1);
    Rng rng(seed);
    p.trunk = make_stack(p.trunk_dims, rng);
    p.head = make_stack(p.head_dims, rng);
    p.input_shift = Vector::Zero(input_dim);
    p.input_scale = Vector::Ones(input_dim);
    return p;
}

void fit_input_standardization(MlpParams& params, const RowMatrix& states) {
    if (states.cols() != params.input_dim())
        throw DimensionMismatch(params.input_dim(), states.cols(), "input standardization");
    if (states.rows() == 0) throw ValidationError("no states to standardize on");
    const Vector mean = states.colwise().mean().transpose();
    const Vector var = (states.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    params.input_shift = mean;
    params.input_scale = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

/// Pre- and post-activation values of one stack for a batch.
struct StackCache {
    std::vector<Matrix> inputs;  // inputs[l] feeds layer l
    std::vector<Matrix> pre;     // pre-activation of layer l
};

Matrix standardize(const MlpParams& p, const Matrix& x) {
    return ((x.colwise() - p.input_shift).array().colwise() * p.input_scale.array()).matrix();
}

Matrix stack_forward(const std::vector<DenseLayer>& layers, Matrix x, StackCache* cache) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weight * x;
        z.colwise() += layers[l].bias;
        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->pre.push_back(z);
        }
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
        x = std::move(z);
    }
    return x;
}

/// Backpropagates d(loss)/d(output) through a stack, accumulating parameter
/// gradients into `grads` and returning d(loss)/d(input).
Matrix stack_backward(const std::vector<DenseLayer>& layers, const StackCache& cache, Matrix delta,
                      std::vector<DenseLayer>& grads) {
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (l + 1 < layers.size()) delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
        grads[l].weight.noalias() += delta * cache.inputs[l].transpose();
        grads[l].bias += delta.rowwise().sum();
        delta = layers[l].weight.transpose() * delta;
    }
    return delta;
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// BCE from a logit: softplus(z) - y z.
double bce_from_logit(double z, double y) {
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    return softplus - y * z;
}

double label_value(PairLabel l) { return l == PairLabel::same ? 1.0 : 0.0; }

void check_inputs(const MlpParams& p, const Matrix& a, const Matrix& b, std::size_t n_labels) {
    if (p.empty()) throw ValidationError("classifier has no layers");
    if (a.rows() != p.input_dim()) throw DimensionMismatch(p.input_dim(), a.rows(), "pair input a");
    if (b.rows() != p.input_dim()) throw DimensionMismatch(p.input_dim(), b.rows(), "pair input b");
    if (a.cols() != b.cols() || static_cast<std::size_t>(a.cols()) != n_labels)
        throw ValidationError("pair batch sizes disagree");
}

}  // namespace

Matrix trunk_forward(const MlpParams& params, const Matrix& inputs) {
    if (inputs.rows() != params.input_dim()) throw DimensionMismatch(params.input_dim(), inputs.rows(), "trunk input");
    return stack_forward(params.trunk, standardize(params, inputs), nullptr);
}

Vector head_logits(const MlpParams& params, const Matrix& abs_diff) {
    return stack_forward(params.head, abs_diff, nullptr).row(0).transpose();
}

double siamese_forward(const MlpParams& params, const Vector& a, const Vector& b) {
    if (params.empty()) throw ValidationError("classifier has no layers");
    if (a.size() != params.input_dim()) throw DimensionMismatch(params.input_dim(), a.size(), "pair input a");
    if (b.size() != params.input_dim()) throw DimensionMismatch(params.input_dim(), b.size(), "pair input b");
    const Matrix fa = trunk_forward(params, a);
    const Matrix fb = trunk_forward(params, b);
    const double z = head_logits(params, (fa - fb).cwiseAbs())(0);
    const double p = sigmoid(z);
    if (!std::isfinite(z) || !all_finite(fa) || !all_finite(fb)) throw NumericFailure("non-finite activation in siamese forward pass");
    return p;
}

double bce_loss(double p, PairLabel label) {
    const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return label == PairLabel::same ? -std::log(q) : -std::log1p(-q);
}

double mean_loss(const MlpParams& params, const Matrix& a, const Matrix& b, const std::vector<PairLabel>& labels) {
    check_inputs(params, a, b, labels.size());
    const Vector z = head_logits(params, (trunk_forward(params, a) - trunk_forward(params, b)).cwiseAbs());
    double total = 0.0;
    for (Index i = 0; i < z.size(); ++i) total += bce_from_logit(z(i), label_value(labels[static_cast<std::size_t>(i)]));
    return total / static_cast<double>(z.size());
}

double loss_and_gradient(const MlpParams& params, const Matrix& a, const Matrix& b,
                         const std::vector<PairLabel>& labels, MlpParams& grad) {
    check_inputs(params, a, b, labels.size());
    const Index n = a.cols();
    grad = params.zeros_like();

    // Both branches share the trunk, so run them as one 2n-column batch.
    Matrix both(a.rows(), 2 * n);
    both.leftCols(n) = a;
    both.rightCols(n) = b;
    StackCache trunk_cache;
    const Matrix emb = stack_forward(params.trunk, standardize(params, both), &trunk_cache);
    const Matrix diff = emb.leftCols(n) - emb.rightCols(n);
    StackCache head_cache;
    const Matrix logits = stack_forward(params.head, diff.cwiseAbs(), &head_cache);

    double total = 0.0;
    Matrix delta(1, n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) {
        const double y = label_value(labels[static_cast<std::size_t>(i)]);
        const double z = logits(0, i);
        total += bce_from_logit(z, y);
        delta(0, i) = (sigmoid(z) - y) * inv_n;
    }

    const Matrix d_abs = stack_backward(params.head, head_cache, delta, grad.head);
    // d|d|/dd = sign(d), with zero at d == 0.
    const Matrix d_diff = d_abs.cwiseProduct(diff.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); }));
    Matrix d_emb(d_diff.rows(), 2 * n);
    d_emb.leftCols(n) = d_diff;
    d_emb.rightCols(n) = -d_diff;
    stack_backward(params.trunk, trunk_cache, d_emb, grad.trunk);
    return total * inv_n;
}

Matrix gather_columns(const RowMatrix& states, const std::vector<Index>& rows) {
    Matrix out(states.cols(), static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out.col(static_cast<Index>(k)) = states.row(rows[k]).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct AdamState {
    Vector m;
    Vector v;
    Index t = 0;
};

void adam_update(Vector& theta, const Vector& g, AdamState& s, const AdamConfig& cfg) {
    ++s.t;
    s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * g;
    s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    theta.array() -= cfg.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.epsilon);
}

std::vector<std::size_t> interleave(const std::vector<std::size_t>& same, const std::vector<std::size_t>& diff) {
    std::vector<std::size_t> out;
    out.reserve(same.size() + diff.size());
    std::size_t i = 0, j = 0;
    while (i < same.size() || j < diff.size()) {
        if (i < same.size()) out.push_back(same[i++]);
        if (j < diff.size()) out.push_back(diff[j++]);
    }
    return out;
}

double batch_loss(const MlpParams& params, const RowMatrix& states, const std::vector<PairSample>& samples,
                  const std::vector<std::size_t>& idx, Index chunk) {
    if (idx.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(chunk));
        std::vector<Index> ra, rb;
        std::vector<PairLabel> labels;
        for (std::size_t k = start; k < end; ++k) {
            ra.push_back(samples[idx[k]].a);
            rb.push_back(samples[idx[k]].b);
            labels.push_back(samples[idx[k]].label);
        }
        total += mean_loss(params, gather_columns(states, ra), gather_columns(states, rb), labels) *
                 static_cast<double>(end - start);
    }
    return total / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train(MlpParams params, const RowMatrix& states, const std::vector<PairSample>& samples,
                  const TrainConfig& cfg) {
    if (samples.empty()) throw ValidationError("training needs at least one pair");
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
        throw ValidationError("validation_fraction must lie in (0, 1)");
    if (cfg.batch_size < 1 || cfg.epochs < 0) throw ValidationError("bad batch_size or epochs");
    if (states.cols() != params.input_dim()) throw DimensionMismatch(params.input_dim(), states.cols(), "training states");

    // Canonical order, then seeded split into train/validation per label.
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto& s = samples[x];
        const auto& t = samples[y];
        return std::tuple(static_cast<int>(s.label), s.a, s.b) < std::tuple(static_cast<int>(t.label), t.a, t.b);
    });
    std::vector<std::size_t> same, diff;
    for (std::size_t k : order) (samples[k].label == PairLabel::same ? same : diff).push_back(k);
    if (same.empty() || diff.empty()) throw ValidationError("training needs both same and different pairs");

    Rng rng(cfg.seed);
    std::shuffle(same.begin(), same.end(), rng.engine());
    std::shuffle(diff.begin(), diff.end(), rng.engine());
    auto split = [&](std::vector<std::size_t>& v, std::vector<std::size_t>& held) {
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(v.size())));
        held.assign(v.end() - static_cast<std::ptrdiff_t>(n_val), v.end());
        v.resize(v.size() - n_val);
    };
    std::vector<std::size_t> val_same, val_diff;
    split(same, val_same);
    split(diff, val_diff);
    const std::vector<std::size_t> validation = interleave(val_same, val_diff);

    TrainResult result;
    Vector theta = params.flatten();
    AdamState adam{Vector::Zero(theta.size()), Vector::Zero(theta.size()), 0};
    MlpParams grad;

    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(same.begin(), same.end(), rng.engine());
        std::shuffle(diff.begin(), diff.end(), rng.engine());
        const std::vector<std::size_t> sequence = interleave(same, diff);
        double epoch_loss = 0.0;
        Index batches = 0;
        for (std::size_t start = 0; start < sequence.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(sequence.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Index> ra, rb;
            std::vector<PairLabel> labels;
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = samples[sequence[k]];
                ra.push_back(s.a);
                rb.push_back(s.b);
                labels.push_back(s.label);
            }
            const double loss =
                loss_and_gradient(params, gather_columns(states, ra), gather_columns(states, rb), labels, grad);
            const Vector g = grad.flatten();
            if (!std::isfinite(loss) || !all_finite(g)) {
                result.failure = "non-finite loss at epoch " + std::to_string(epoch);
                result.params = std::move(params);
                return result;
            }
            Vector next = theta;
            adam_update(next, g, adam, cfg.adam);
            if (!all_finite(next)) {
                result.failure = "non-finite parameters at epoch " + std::to_string(epoch);
                result.params = std::move(params);
                return result;
            }
            theta = std::move(next);
            params.unflatten(theta);
            epoch_loss += loss;
            ++batches;
        }
        result.train_loss.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0);
        result.validation_loss.push_back(batch_loss(params, states, samples, validation, 1024));
    }
    result.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------
// Risk estimation

namespace {

/// Embeds the rows of `states` referenced by `pairs`; returns the embeddings
/// (embedding x n_used) and a row -> column map (-1 for unused rows).
std::pair<Matrix, std::vector<Index>> embed_used_rows(const MlpParams& params, const RowMatrix& states,
                                                      const std::vector<const std::vector<PairSample>*>& groups) {
    std::vector<Index> column(static_cast<std::size_t>(states.rows()), -1);
    std::vector<Index> rows;
    for (const auto* g : groups) {
        for (const auto& s : *g) {
            for (Index r : {s.a, s.b}) {
                if (r < 0 || r >= states.rows()) throw ValidationError("pair references a missing state row");
                if (column[static_cast<std::size_t>(r)] < 0) {
                    column[static_cast<std::size_t>(r)] = static_cast<Index>(rows.size());
                    rows.push_back(r);
                }
            }
        }
    }
    Matrix emb(params.embedding_dim(), static_cast<Index>(rows.size()));
    constexpr std::size_t chunk = 4096;
    for (std::size_t start = 0; start < rows.size(); start += chunk) {
        const std::size_t end = std::min(rows.size(), start + chunk);
        const std::vector<Index> part(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                      rows.begin() + static_cast<std::ptrdiff_t>(end));
        emb.middleCols(static_cast<Index>(start), static_cast<Index>(end - start)) =
            trunk_forward(params, gather_columns(states, part));
    }
    if (!all_finite(emb)) throw NumericFailure("non-finite trunk embedding");
    return {std::move(emb), std::move(column)};
}

Vector probabilities_for(const MlpParams& params, const Matrix& emb, const std::vector<Index>& column,
                         const std::vector<PairSample>& pairs) {
    Matrix diff(emb.rows(), static_cast<Index>(pairs.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        diff.col(static_cast<Index>(k)) =
            (emb.col(column[static_cast<std::size_t>(pairs[k].a)]) - emb.col(column[static_cast<std::size_t>(pairs[k].b)]))
                .cwiseAbs();
    }
    const Vector z = head_logits(params, diff);
    if (!all_finite(z)) throw NumericFailure("non-finite classifier logit");
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

Vector pair_probabilities(const MlpParams& params, const RowMatrix& states, const std::vector<PairSample>& pairs) {
    if (params.empty()) throw ValidationError("classifier has no layers");
    if (states.cols() != params.input_dim()) throw DimensionMismatch(params.input_dim(), states.cols(), "pair states");
    if (pairs.empty()) return Vector();
    const auto [emb, column] = embed_used_rows(params, states, {&pairs});
    return probabilities_for(params, emb, column, pairs);
}

Matrix estimate_pair_risk(const MlpParams& params, const RowMatrix& states, const std::vector<RiskCell>& cells,
                          Index num_candidates, Index min_pairs) {
    if (params.empty()) throw ValidationError("classifier has no layers");
    if (states.cols() != params.input_dim()) throw DimensionMismatch(params.input_dim(), states.cols(), "risk states");
    std::vector<const std::vector<PairSample>*> groups;
    for (const auto& c : cells) {
        if (c.i < 0 || c.j < 0 || c.i >= num_candidates || c.j >= num_candidates || c.i == c.j)
            throw ValidationError("risk cell indices out of range");
        if (static_cast<Index>(c.pairs.size()) < min_pairs)
            throw InsufficientPairs(c.i, c.j, static_cast<Index>(c.pairs.size()), min_pairs);
        groups.push_back(&c.pairs);
    }
    Matrix risk = Matrix::Zero(num_candidates, num_candidates);
    if (cells.empty()) return risk;
    const auto [emb, column] = embed_used_rows(params, states, groups);
    for (const auto& c : cells) {
        const Vector p = probabilities_for(params, emb, column, c.pairs);
        Index errors = 0;
        for (std::size_t k = 0; k < c.pairs.size(); ++k) {
            const PairLabel predicted = p(static_cast<Index>(k)) > 0.5 ? PairLabel::same : PairLabel::different;
            if (predicted != c.pairs[k].label) ++errors;
        }
        const double r = static_cast<double>(errors) / static_cast<double>(c.pairs.size());
        risk(c.i, c.j) = r;
        risk(c.j, c.i) = r;
    }
    return risk;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMlpMagic[8] = {'N', 'B', 'I', 'M', 'L', 'P', '\0', '\0'};
constexpr std::uint32_t kMlpVersion = 1;

void put_dims(std::ostream& out, const std::vector<Index>& dims) {
    io::put_u32(out, static_cast<std::uint32_t>(dims.empty() ? 0 : dims.size() - 1));
    for (Index d : dims) io::put_u64(out, static_cast<std::uint64_t>(d));
}

std::vector<Index> get_dims(std::istream& in) {
    const std::uint32_t layers = io::get_u32(in);
    if (layers > 1024) throw ValidationError("implausible layer count in checkpoint");
    std::vector<Index> dims(layers == 0 ? 0 : layers + 1);
    for (auto& d : dims) {
        d = static_cast<Index>(io::get_u64(in));
        if (d < 1 || d > (Index{1} << 24)) throw ValidationError("bad layer width in checkpoint");
    }
    return dims;
}

void put_layer(std::ostream& out, const DenseLayer& l) {
    const RowMatrix w = l.weight;
    io::put_f64s(out, w.data(), w.size());
    io::put_f64s(out, l.bias.data(), l.bias.size());
}

DenseLayer get_layer(std::istream& in, Index rows, Index cols) {
    RowMatrix w(rows, cols);
    io::get_f64s(in, w.data(), w.size());
    DenseLayer l;
    l.weight = w;
    l.bias.resize(rows);
    io::get_f64s(in, l.bias.data(), rows);
    return l;
}
}  // namespace

void write_checkpoint(const MlpParams& params, std::ostream& out) {
    out.write(kMlpMagic, sizeof kMlpMagic);
    io::put_u32(out, kMlpVersion);
    put_dims(out, params.trunk_dims);
    put_dims(out, params.head_dims);
    io::put_f64s(out, params.input_shift.data(), params.input_shift.size());
    io::put_f64s(out, params.input_scale.data(), params.input_scale.size());
    for (const auto& l : params.trunk) put_layer(out, l);
    for (const auto& l : params.head) put_layer(out, l);
    if (!out) throw Error("failed writing checkpoint");
}

MlpParams read_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMlpMagic)) throw ValidationError("not a classifier checkpoint");
    if (io::get_u32(in) != kMlpVersion) throw ValidationError("unsupported checkpoint version");
    MlpParams p;
    p.trunk_dims = get_dims(in);
    p.head_dims = get_dims(in);
    if (p.trunk_dims.empty() || p.head_dims.empty() || p.head_dims.front() != p.trunk_dims.back() ||
        p.head_dims.back() != 1)
        throw ValidationError("inconsistent layer dims in checkpoint");
    const Index d = p.input_dim();
    p.input_shift.resize(d);
    p.input_scale.resize(d);
    io::get_f64s(in, p.input_shift.data(), d);
    io::get_f64s(in, p.input_scale.data(), d);
    for (std::size_t l = 0; l + 1 < p.trunk_dims.size(); ++l)
        p.trunk.push_back(get_layer(in, p.trunk_dims[l + 1], p.trunk_dims[l]));
    for (std::size_t l = 0; l + 1 < p.head_dims.size(); ++l)
        p.head.push_back(get_layer(in, p.head_dims[l + 1], p.head_dims[l]));
    return p;
}

}  // namespace nbi
