#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gruvar/cells.hpp"
#include "gruvar/data.hpp"
#include "gruvar/linalg.hpp"
#include "gruvar/rng.hpp"

namespace gruvar {

enum class LossKind { CategoricalCe, BinaryCe };
enum class Split { Train, Test };

std::string loss_kind_name(LossKind k);
std::string split_name(Split s);

struct TrainConfig {
    CellKind cell_kind = CellKind::Gru;
    GateVariant variant = GateVariant::Full;
    std::size_t hidden = 100;
    double base_lr = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double dropout_rate = 0.2;
    LossKind loss_kind = LossKind::CategoricalCe;
    Activation activation = Activation::Relu;
    std::uint64_t seed = 0;
    std::optional<double> clip_norm = 5.0;  // global gradient norm; nullopt disables
};

struct HeadParams {
    Matrix w_out;  // k x n (k = classes, or 1 for the logistic head)
    Vector b_out;  // k
};

struct MetricsRecord {
    std::size_t epoch = 0;
    Split split = Split::Train;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct Model {
    CellParams cell;
    HeadParams head;
    std::optional<EmbeddingTable> embedding;  // token tasks only
    Activation activation = Activation::Relu;
    LossKind loss_kind = LossKind::CategoricalCe;
};

// Gradients shaped like the model. The embedding gradient is dense at batch
// level; per-sample embedding gradients stay sparse until reduction.
struct ModelGrads {
    CellParams cell;
    HeadParams head;
    std::optional<Matrix> embedding;
};

// Builds and initializes a model for the given task geometry. classes is the
// softmax width for categorical loss and ignored (head width 1) for binary.
Model make_model(const TrainConfig& cfg, std::size_t input_dim, std::size_t classes,
                 std::optional<std::pair<std::size_t, std::size_t>> embedding_vocab_dim);

ModelGrads make_zero_grads(const Model& model);

// Every trainable tensor of the model in a stable, documented order:
// cell tensors, head w/b, then the embedding when present.
std::vector<TensorRef> model_tensor_refs(Model& m);
std::vector<ConstTensorRef> model_tensor_refs(const Model& m);
std::vector<TensorRef> grads_tensor_refs(ModelGrads& g);

std::size_t model_param_total(const Model& m);

// ---- heads and losses ----

// softmax(W h + b) for the categorical head; sigma(w.h + b) (length 1) for
// the logistic head.
Vector head_forward(const HeadParams& p, const Vector& h, LossKind kind);

// Cross-entropy with probabilities clamped to [1e-12, 1-1e-12] before the log.
double loss_value(LossKind kind, const Vector& probs, int target);

int predict(LossKind kind, const Vector& probs);

struct HeadBackward {
    Matrix dw_out;
    Vector db_out;
    Vector dh;
};
// Gradient of the cross-entropy through the (softmax|logistic) head; probs
// must come from head_forward on the same h.
HeadBackward head_backward(const HeadParams& p, const Vector& h, const Vector& probs,
                           int target, LossKind kind);

// eta = eta0 * exp(-cost), the once-per-epoch decay from the previous epoch's
// mean training loss.
double decay_learning_rate(double base_lr, double cost);

// ---- optimizer ----

struct RmspropConfig {
    double rho = 0.9;
    double epsilon = 1e-8;
};

struct RmspropState {
    RmspropConfig cfg;
    std::vector<Vector> acc;  // aligned with model_tensor_refs order
};

RmspropState make_rmsprop_state(const Model& m, RmspropConfig cfg = {});

// acc <- rho acc + (1-rho) g^2; theta <- theta - lr g / (sqrt(acc) + eps).
void rmsprop_step_tensor(std::span<double> acc, std::span<double> params,
                         std::span<const double> grads, double lr, const RmspropConfig& cfg);
void rmsprop_update(RmspropState& state, Model& m, ModelGrads& grads, double lr);

// Scales all gradients by clip/norm when the global L2 norm exceeds clip.
// Returns the pre-clip norm.
double clip_gradients(ModelGrads& grads, double clip);

// ---- dropout ----

struct DropoutResult {
    Vector h;
    Vector mask;  // entries 0 or 1/(1-rate); all ones outside training
};
// Inverted dropout: each entry is zeroed with probability rate and survivors
// are scaled by 1/(1-rate). Identity when training is false or rate is 0.
DropoutResult apply_dropout(const Vector& h, double rate, Rng& rng, bool training);

// ---- epoch loop ----

// One shuffled pass over data: per-sample BPTT through the final-step head,
// one RMSprop step per batch, loss reported as the epoch mean. Samples within
// a batch run in parallel; gradients are reduced in sample-index order, so
// results are bit-identical for any thread count.
MetricsRecord train_epoch(const TrainConfig& cfg, Model& model, RmspropState& opt,
                          const Dataset& data, std::size_t epoch, double lr);

// Dropout disabled, no mutation, deterministic.
MetricsRecord evaluate(const Model& model, const Dataset& data, std::size_t epoch = 1,
                       double lr = 0.0);

// Full run: epochs alternating train/test records, learning rate decayed from
// the previous epoch's mean training loss. sink sees each record as it is
// produced.
std::vector<MetricsRecord> run_training(const TrainConfig& cfg, Model& model,
                                        const Dataset& train, const Dataset& test,
                                        const std::function<void(const MetricsRecord&)>& sink);

}  // namespace gruvar
