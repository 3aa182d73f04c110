#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gruvar/linalg.hpp"
#include "gruvar/rng.hpp"

namespace gruvar {

enum class CellKind { Rnn, Lstm, Gru };

// Gate parameterizations. Full is the standard GRU (GRU0); the others drop
// gate tensors: StateBias (GRU1) keeps U and b, StateOnly (GRU2) keeps U
// alone, BiasOnly (GRU3) keeps b alone.
enum class GateVariant { Full, StateBias, StateOnly, BiasOnly };

struct CellDims {
    std::size_t hidden = 0;  // n
    std::size_t input = 0;   // m
};

// Thrown when a parameter bundle disagrees with its declared gate variant.
class VariantError : public std::invalid_argument {
public:
    explicit VariantError(const std::string& what) : std::invalid_argument(what) {}
};

struct RnnParams {
    Matrix w;  // n x m
    Matrix u;  // n x n
    Vector b;  // n
};

struct LstmGate {
    Matrix w;
    Matrix u;
    Vector b;
};

struct LstmParams {
    LstmGate input_gate;
    LstmGate forget_gate;
    LstmGate output_gate;
    LstmGate candidate;
};

// Gate tensors a variant does not use are structurally absent, so the
// allocated scalar count is exactly the variant's trainable-parameter count.
struct GruGateParams {
    std::optional<Matrix> w;  // n x m
    std::optional<Matrix> u;  // n x n
    std::optional<Vector> b;  // n
};

struct GruParams {
    GateVariant variant = GateVariant::Full;
    Matrix w_h;  // candidate, n x m
    Matrix u_h;  // candidate, n x n
    Vector b_h;  // candidate, n
    GruGateParams update;  // z gate
    GruGateParams reset;   // r gate
};

struct RnnStepCache {
    Vector h_prev;
    Vector pre;  // W x + U h_prev + b
    Vector h;
    double min_abs_pre = 0.0;
};

struct LstmStepCache {
    Vector h_prev;
    Vector c_prev;
    Vector i, f, o;     // gate outputs, each strictly in (0,1)
    Vector c_bar;       // candidate g(pre_c)
    Vector c;           // new cell state (pre-activation of the output g)
    Vector g_c;         // g(c)
    Vector pre_c;
    double min_abs_pre = 0.0;  // over pre_c and c (the g-activated signals)
};

struct GruStepCache {
    Vector h_prev;
    Vector z, r;     // gate outputs, each strictly in (0,1)
    Vector rh;       // r ⊙ h_prev
    Vector pre_h;    // candidate pre-activation
    Vector h_bar;    // g(pre_h)
    double min_abs_pre = 0.0;  // over pre_h
};

struct EmbeddingTable {
    std::size_t vocab = 0;
    std::size_t dim = 0;
    Matrix rows;  // vocab x dim
};

// Gradient of an embedding for one sample: touched rows only.
struct EmbeddingGrad {
    std::vector<std::pair<int, Vector>> rows;
};

// ---- single steps ----

struct RnnStepResult {
    Vector h;
    RnnStepCache cache;
};
RnnStepResult simple_rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev,
                              Activation g);

struct LstmStepResult {
    Vector h;
    Vector c;
    LstmStepCache cache;
};
LstmStepResult lstm_step(const LstmParams& p, const Vector& x, const Vector& h_prev,
                         const Vector& c_prev, Activation g);

struct GruStepResult {
    Vector h;
    GruStepCache cache;
};
GruStepResult gru_step(const GruParams& p, const Vector& x, const Vector& h_prev, Activation g);

// ---- sequence forward / backward (BPTT) ----

struct RnnSequenceResult {
    std::vector<Vector> h_seq;
    std::vector<RnnStepCache> caches;
};
RnnSequenceResult rnn_sequence_forward(const RnnParams& p, const std::vector<Vector>& xs,
                                       const Vector& h0, Activation g);

struct LstmSequenceResult {
    std::vector<Vector> h_seq;
    std::vector<LstmStepCache> caches;
};
LstmSequenceResult lstm_sequence_forward(const LstmParams& p, const std::vector<Vector>& xs,
                                         const Vector& h0, const Vector& c0, Activation g);

struct GruSequenceResult {
    std::vector<Vector> h_seq;
    std::vector<GruStepCache> caches;
};
GruSequenceResult gru_sequence_forward(const GruParams& p, const std::vector<Vector>& xs,
                                       const Vector& h0, Activation g);

// Backward passes take the per-timestep upstream gradients dL/dh_t and return
// parameter gradients shaped exactly like the parameter bundle (absent gate
// tensors stay absent), plus dL/dx_t and dL/dh0.
struct RnnSequenceGrads {
    RnnParams params;
    std::vector<Vector> dx_seq;
    Vector dh0;
};
RnnSequenceGrads rnn_sequence_backward(const RnnParams& p, const std::vector<RnnStepCache>& caches,
                                       const std::vector<Vector>& xs,
                                       const std::vector<Vector>& dh_seq, Activation g);

struct LstmSequenceGrads {
    LstmParams params;
    std::vector<Vector> dx_seq;
    Vector dh0;
};
LstmSequenceGrads lstm_sequence_backward(const LstmParams& p,
                                         const std::vector<LstmStepCache>& caches,
                                         const std::vector<Vector>& xs,
                                         const std::vector<Vector>& dh_seq, Activation g);

struct GruSequenceGrads {
    GruParams params;
    std::vector<Vector> dx_seq;
    Vector dh0;
};
GruSequenceGrads gru_sequence_backward(const GruParams& p, const std::vector<GruStepCache>& caches,
                                       const std::vector<Vector>& xs,
                                       const std::vector<Vector>& dh_seq, Activation g);

// ---- type-erased cell for the training loop ----

using CellParams = std::variant<RnnParams, LstmParams, GruParams>;
using CellCaches =
    std::variant<std::vector<RnnStepCache>, std::vector<LstmStepCache>, std::vector<GruStepCache>>;

struct CellForward {
    std::vector<Vector> h_seq;
    CellCaches caches;
};
// h0 (and c0 for the LSTM) start at zero.
CellForward cell_sequence_forward(const CellParams& p, const std::vector<Vector>& xs, Activation g);

struct CellBackward {
    CellParams grads;
    std::vector<Vector> dx_seq;
    Vector dh0;
};
CellBackward cell_sequence_backward(const CellParams& p, const CellCaches& caches,
                                    const std::vector<Vector>& xs,
                                    const std::vector<Vector>& dh_seq, Activation g);

CellKind cell_kind_of(const CellParams& p);
double min_abs_preactivation(const CellCaches& caches);

// ---- construction / bookkeeping ----

// Allocates a zero-filled bundle with the variant's exact tensor set.
CellParams make_cell_params(CellKind kind, GateVariant variant, CellDims dims);

// Glorot-uniform input and candidate weights, orthogonal recurrent matrices,
// zero biases.
void init_cell_params(CellParams& p, Rng& rng);

CellDims cell_dims(const CellParams& p);

// Trainable-scalar count of the cell alone (no head, no embedding).
// RNN: n^2+nm+n. LSTM: 4(n^2+nm+n). GRU: 3(n^2+nm+n) minus the variant's
// reduction (StateBias 2nm, StateOnly 2(nm+n), BiasOnly 2(nm+n^2)).
std::size_t param_count(CellKind kind, std::optional<GateVariant> variant, CellDims dims);

// Throws VariantError unless the present tensor set matches the variant and
// all shapes agree.
void validate_gru_params(const GruParams& p);

// ---- flat tensor access (optimizer, serialization, gradient checks) ----

struct TensorRef {
    std::string name;
    double* data;
    std::size_t size;
};
struct ConstTensorRef {
    std::string name;
    const double* data;
    std::size_t size;
};

// Stable, documented order: candidate/cell tensors first, then gates.
std::vector<TensorRef> tensor_refs(CellParams& p);
std::vector<ConstTensorRef> tensor_refs(const CellParams& p);

// ---- embedding ----

EmbeddingTable make_embedding(std::size_t vocab, std::size_t dim);
void init_embedding(EmbeddingTable& t, Rng& rng, double scale = 0.05);

// Pad positions produce the zero vector and never receive gradient.
std::vector<Vector> embedding_forward(const EmbeddingTable& t, std::span<const int> token_ids,
                                      int pad_id);
EmbeddingGrad embedding_backward(std::span<const int> token_ids,
                                 const std::vector<Vector>& upstream, int pad_id,
                                 const EmbeddingTable& t);

// Fixed-order orthonormal basis from a QR factorization of a Gaussian draw.
Matrix random_orthogonal(std::size_t n, Rng& rng);

std::string cell_kind_name(CellKind kind);
std::string variant_name(GateVariant v);

}  // namespace gruvar
