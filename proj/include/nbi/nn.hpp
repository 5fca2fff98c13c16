#pragma once

#include "nbi/core.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace nbi {

struct DenseLayer {
    Matrix weight;  ///< out x in
    Vector bias;    ///< out
};

/// Parameters of the siamese pair classifier
///
///   p(a, b) = sigmoid(head(|trunk(a) - trunk(b)|))
///
/// `trunk_dims` = [D, hidden..., embedding] and `head_dims` = [embedding,
/// hidden..., 1]. Every layer except the last of each stack is followed by a
/// ReLU. Inputs are standardized as (x - input_shift) .* input_scale before the
/// trunk; the standardization is fixed, not trained.
struct MlpParams {
    std::vector<Index> trunk_dims;
    std::vector<Index> head_dims;
    std::vector<DenseLayer> trunk;
    std::vector<DenseLayer> head;
    Vector input_shift;
    Vector input_scale;

    Index input_dim() const { return trunk_dims.empty() ? 0 : trunk_dims.front(); }
    Index embedding_dim() const { return trunk_dims.empty() ? 0 : trunk_dims.back(); }
    bool empty() const { return trunk.empty(); }
    Index num_parameters() const;

    /// Trainable parameters in a fixed order: trunk layers then head layers,
    /// each as weight (column-major) followed by bias.
    Vector flatten() const;
    void unflatten(const Vector& flat);

    /// Same shapes, all trainable parameters zero.
    MlpParams zeros_like() const;
};

/// He-initialized network with zero biases and identity standardization.
MlpParams init_siamese(Index input_dim, const std::vector<Index>& trunk_hidden, Index embedding_dim,
                       const std::vector<Index>& head_hidden, std::uint64_t seed);

/// Sets the input standardization from the per-coordinate mean and standard
/// deviation of `states` (one state per row). Constant coordinates get scale 1.
void fit_input_standardization(MlpParams& params, const RowMatrix& states);

enum class PairLabel : int { different = 0, same = 1 };

/// A pair of rows of a shared state matrix. `candidate_a`/`candidate_b` record
/// which candidate batch produced each row.
struct PairSample {
    Index a = 0;
    Index b = 0;
    PairLabel label = PairLabel::different;
    Index candidate_a = 0;
    Index candidate_b = 0;
};

/// Trunk embeddings of each column of `inputs` (D x N) -> (embedding x N).
Matrix trunk_forward(const MlpParams& params, const Matrix& inputs);

/// Head logits for embedding differences |e_a - e_b| (embedding x N) -> N.
Vector head_logits(const MlpParams& params, const Matrix& abs_diff);

/// Same-initialization probability of one pair. Exactly symmetric in (a, b).
/// Throws NumericFailure on a non-finite activation.
double siamese_forward(const MlpParams& params, const Vector& a, const Vector& b);

/// Binary cross entropy -[y log p + (1 - y) log(1 - p)] with p clamped to
/// [1e-12, 1 - 1e-12].
double bce_loss(double p, PairLabel label);

/// Mean BCE over the pairs (columns of `a` and `b`) and its exact gradient with
/// respect to every trainable parameter. The loss is evaluated from logits.
double loss_and_gradient(const MlpParams& params, const Matrix& a, const Matrix& b,
                         const std::vector<PairLabel>& labels, MlpParams& grad);

/// Mean BCE without gradients.
double mean_loss(const MlpParams& params, const Matrix& a, const Matrix& b, const std::vector<PairLabel>& labels);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    Index epochs = 20;
    Index batch_size = 128;
    AdamConfig adam;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
};

struct TrainResult {
    MlpParams params;
    std::vector<double> train_loss;       ///< mean minibatch loss per epoch
    std::vector<double> validation_loss;  ///< held-out loss per epoch
    std::string failure;                  ///< non-empty if training stopped on a numeric failure

    bool ok() const { return failure.empty(); }
};

/// Adam on shuffled, label-balanced minibatches. Samples are put in a
/// canonical order before seeding, so the result depends only on the sample
/// set and `cfg.seed`. On a non-finite loss training stops and returns the
/// last finite parameters with `failure` set.
TrainResult train(MlpParams params, const RowMatrix& states, const std::vector<PairSample>& samples,
                  const TrainConfig& cfg);

/// Rows of `states` at `rows`, as a D x rows.size() column matrix.
Matrix gather_columns(const RowMatrix& states, const std::vector<Index>& rows);

// Risk estimation ----------------------------------------------------------

/// Held-out pairs for candidate cell (i, j), i < j: cross pairs labelled
/// `different` and within-candidate pairs labelled `same`.
struct RiskCell {
    Index i = 0;
    Index j = 0;
    std::vector<PairSample> pairs;
};

struct InsufficientPairs : ValidationError {
    InsufficientPairs(Index i, Index j, Index have, Index need)
        : ValidationError("cell (" + std::to_string(i) + ", " + std::to_string(j) + ") has " + std::to_string(have) +
                          " evaluation pairs, need " + std::to_string(need)),
          i(i),
          j(j) {}
    Index i;
    Index j;
};

/// Symmetric K x K matrix of held-out misclassification rates at threshold
/// 0.5: a pair is called `same` iff p > 0.5, so p == 0.5 predicts `different`.
/// The diagonal is unused and left at 0. Throws InsufficientPairs for any cell
/// with fewer than `min_pairs` pairs.
Matrix estimate_pair_risk(const MlpParams& params, const RowMatrix& states, const std::vector<RiskCell>& cells,
                          Index num_candidates, Index min_pairs = 200);

/// Same-probability for every pair, using one trunk pass per distinct row.
Vector pair_probabilities(const MlpParams& params, const RowMatrix& states, const std::vector<PairSample>& pairs);

// Checkpoints ---------------------------------------------------------------

/// Binary layout, little-endian:
///   char[8] magic "NBIMLP\0\0", u32 version (1)
///   u32 trunk layer count Lt, u64[Lt + 1] trunk dims
///   u32 head layer count Lh,  u64[Lh + 1] head dims
///   f64[D] input_shift, f64[D] input_scale
///   per layer (trunk then head): f64 weight row-major (out x in), f64 bias
void write_checkpoint(const MlpParams& params, std::ostream& out);
MlpParams read_checkpoint(std::istream& in);

}  // namespace nbi
