#include "gruvar/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "gruvar/parallel.hpp"

namespace gruvar {

namespace {

constexpr double kProbClamp = 1e-12;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Distinct stream tags so init, shuffling, and dropout never share draws.
constexpr std::uint64_t kInitStream = 0x1;
constexpr std::uint64_t kShuffleStream = 0x2;
constexpr std::uint64_t kDropoutStream = 0x3;

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string loss_kind_name(LossKind k) {
    return k == LossKind::CategoricalCe ? "categorical-ce" : "binary-ce";
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Model make_model(const TrainConfig& cfg, std::size_t input_dim, std::size_t classes,
                 std::optional<std::pair<std::size_t, std::size_t>> embedding_vocab_dim) {
    Model m;
    m.activation = cfg.activation;
    m.loss_kind = cfg.loss_kind;
    Rng rng(mix_seed(cfg.seed, kInitStream));
    if (embedding_vocab_dim) {
        m.embedding = make_embedding(embedding_vocab_dim->first, embedding_vocab_dim->second);
        init_embedding(*m.embedding, rng);
        input_dim = embedding_vocab_dim->second;
    }
    m.cell = make_cell_params(cfg.cell_kind, cfg.variant, CellDims{cfg.hidden, input_dim});
    init_cell_params(m.cell, rng);
    const std::size_t head_width = cfg.loss_kind == LossKind::BinaryCe ? 1 : classes;
    m.head.w_out = Matrix(head_width, cfg.hidden);
    const double limit = std::sqrt(6.0 / static_cast<double>(head_width + cfg.hidden));
    for (double& v : m.head.w_out.data) v = rng.uniform(-limit, limit);
    m.head.b_out = Vector(head_width, 0.0);
    return m;
}

ModelGrads make_zero_grads(const Model& model) {
    ModelGrads g;
    const CellDims dims = cell_dims(model.cell);
    GateVariant variant = GateVariant::Full;
    if (const auto* gru = std::get_if<GruParams>(&model.cell)) variant = gru->variant;
    g.cell = make_cell_params(cell_kind_of(model.cell), variant, dims);
    g.head.w_out = Matrix(model.head.w_out.rows, model.head.w_out.cols);
    g.head.b_out = Vector(model.head.b_out.size(), 0.0);
    if (model.embedding) {
        g.embedding = Matrix(model.embedding->vocab, model.embedding->dim);
    }
    return g;
}

namespace {

template <typename Ref, typename M>
std::vector<Ref> model_refs_impl(M& m) {
    std::vector<Ref> out;
    for (auto& r : tensor_refs(m.cell)) out.push_back(Ref{r.name, r.data, r.size});
    out.push_back(Ref{"head_w", m.head.w_out.data.data(), m.head.w_out.data.size()});
    out.push_back(Ref{"head_b", m.head.b_out.data(), m.head.b_out.size()});
    if (m.embedding) {
        out.push_back(
            Ref{"embedding", m.embedding->rows.data.data(), m.embedding->rows.data.size()});
    }
    return out;
}

}  // namespace

std::vector<TensorRef> model_tensor_refs(Model& m) { return model_refs_impl<TensorRef>(m); }

std::vector<ConstTensorRef> model_tensor_refs(const Model& m) {
    return model_refs_impl<ConstTensorRef>(m);
}

std::vector<TensorRef> grads_tensor_refs(ModelGrads& g) {
    std::vector<TensorRef> out = tensor_refs(g.cell);
    out.push_back(TensorRef{"head_w", g.head.w_out.data.data(), g.head.w_out.data.size()});
    out.push_back(TensorRef{"head_b", g.head.b_out.data(), g.head.b_out.size()});
    if (g.embedding) {
        out.push_back(TensorRef{"embedding", g.embedding->data.data(), g.embedding->data.size()});
    }
    return out;
}

std::size_t model_param_total(const Model& m) {
    std::size_t total = 0;
    for (const auto& r : model_tensor_refs(m)) total += r.size;
    return total;
}

Vector head_forward(const HeadParams& p, const Vector& h, LossKind kind) {
    Vector pre = matvec(p.w_out, h);
    add_inplace(pre, p.b_out);
    if (kind == LossKind::CategoricalCe) {
        return softmax(pre);
    }
    if (pre.size() != 1) {
        throw ShapeError("head_forward: logistic head must have width 1, got " +
                         std::to_string(pre.size()));
    }
    return Vector{sigmoid(pre[0])};
}

double loss_value(LossKind kind, const Vector& probs, int target) {
    if (kind == LossKind::CategoricalCe) {
        if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
            throw std::out_of_range("loss: target " + std::to_string(target) +
                                    " outside 0.." + std::to_string(probs.size() - 1));
        }
        return -std::log(clamp_prob(probs[static_cast<std::size_t>(target)]));
    }
    if (target != 0 && target != 1) {
        throw std::out_of_range("loss: binary target must be 0 or 1, got " +
                                std::to_string(target));
    }
    const double p = clamp_prob(probs.at(0));
    return target == 1 ? -std::log(p) : -std::log(1.0 - p);
}

int predict(LossKind kind, const Vector& probs) {
    if (kind == LossKind::BinaryCe) {
        return probs.at(0) >= 0.5 ? 1 : 0;
    }
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

HeadBackward head_backward(const HeadParams& p, const Vector& h, const Vector& probs,
                           int target, LossKind kind) {
    Vector dpre;
    if (kind == LossKind::CategoricalCe) {
        dpre = probs;
        dpre.at(static_cast<std::size_t>(target)) -= 1.0;
    } else {
        dpre = Vector{probs.at(0) - static_cast<double>(target)};
    }
    HeadBackward out;
    out.dw_out = Matrix(p.w_out.rows, p.w_out.cols);
    add_outer(out.dw_out, dpre, h);
    out.db_out = dpre;
    out.dh = matvec_transpose(p.w_out, dpre);
    return out;
}

double decay_learning_rate(double base_lr, double cost) {
    if (base_lr < 0.0) {
        throw std::invalid_argument("decay_learning_rate: negative base learning rate");
    }
    return base_lr * std::exp(-cost);
}

RmspropState make_rmsprop_state(const Model& m, RmspropConfig cfg) {
    RmspropState state;
    state.cfg = cfg;
    for (const auto& r : model_tensor_refs(m)) {
        state.acc.emplace_back(r.size, 0.0);
    }
    return state;
}

void rmsprop_step_tensor(std::span<double> acc, std::span<double> params,
                         std::span<const double> grads, double lr, const RmspropConfig& cfg) {
    if (acc.size() != params.size() || params.size() != grads.size()) {
        throw ShapeError("rmsprop: accumulator/parameter/gradient sizes differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        acc[i] = cfg.rho * acc[i] + (1.0 - cfg.rho) * g * g;
        params[i] -= lr * g / (std::sqrt(acc[i]) + cfg.epsilon);
    }
}

void rmsprop_update(RmspropState& state, Model& m, ModelGrads& grads, double lr) {
    auto prefs = model_tensor_refs(m);
    auto grefs = grads_tensor_refs(grads);
    if (prefs.size() != grefs.size() || prefs.size() != state.acc.size()) {
        throw ShapeError("rmsprop: model/gradient/state tensor counts differ");
    }
    for (std::size_t k = 0; k < prefs.size(); ++k) {
        rmsprop_step_tensor(state.acc[k], {prefs[k].data, prefs[k].size},
                            {grefs[k].data, grefs[k].size}, lr, state.cfg);
    }
}

double clip_gradients(ModelGrads& grads, double clip) {
    auto refs = grads_tensor_refs(grads);
    double sq = 0.0;
    for (const auto& r : refs) {
        for (std::size_t i = 0; i < r.size; ++i) sq += r.data[i] * r.data[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > clip && norm > 0.0) {
        const double scale = clip / norm;
        for (const auto& r : refs) {
            for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= scale;
        }
    }
    return norm;
}

DropoutResult apply_dropout(const Vector& h, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    }
    DropoutResult out;
    out.h = h;
    out.mask.assign(h.size(), 1.0);
    if (!training || rate == 0.0) return out;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (rng.uniform() < rate) {
            out.mask[i] = 0.0;
            out.h[i] = 0.0;
        } else {
            out.mask[i] = keep_scale;
            out.h[i] *= keep_scale;
        }
    }
    return out;
}

namespace {

struct SampleResult {
    CellParams cell_grads;
    Matrix dw_out;
    Vector db_out;
    EmbeddingGrad emb_grads;
    double loss = 0.0;
    bool correct = false;
};

std::vector<Vector> sample_steps(const Model& model, const Dataset& data, std::size_t index) {
    if (data.token_based()) {
        return embedding_forward(*model.embedding, data.reviews[index].token_ids, kReviewPadId);
    }
    return data.sequence(index).steps;
}

// Forward through cell, dropout and head; backward through everything when
// training. Loss and gradients flow from the final timestep only.
SampleResult run_sample(const Model& model, const Dataset& data, std::size_t index,
                        double dropout_rate, Rng* dropout_rng, bool training) {
    const std::vector<Vector> steps = sample_steps(model, data, index);
    const int target = data.target(index);

    CellForward fwd = cell_sequence_forward(model.cell, steps, model.activation);
    const Vector& h_last = fwd.h_seq.back();

    Rng unused(0);
    DropoutResult drop = apply_dropout(h_last, training ? dropout_rate : 0.0,
                                       dropout_rng != nullptr ? *dropout_rng : unused, training);

    const Vector probs = head_forward(model.head, drop.h, model.loss_kind);

    SampleResult out;
    out.loss = loss_value(model.loss_kind, probs, target);
    out.correct = predict(model.loss_kind, probs) == target;
    if (!training) return out;

    HeadBackward hb = head_backward(model.head, drop.h, probs, target, model.loss_kind);
    Vector dh_last = hadamard(hb.dh, drop.mask);

    std::vector<Vector> dh_seq(steps.size(), Vector(h_last.size(), 0.0));
    dh_seq.back() = std::move(dh_last);

    CellBackward cb =
        cell_sequence_backward(model.cell, fwd.caches, steps, dh_seq, model.activation);
    out.cell_grads = std::move(cb.grads);
    out.dw_out = std::move(hb.dw_out);
    out.db_out = std::move(hb.db_out);
    if (data.token_based()) {
        out.emb_grads = embedding_backward(data.reviews[index].token_ids, cb.dx_seq,
                                           kReviewPadId, *model.embedding);
    }
    return out;
}

void zero_grads(ModelGrads& g) {
    for (auto& r : grads_tensor_refs(g)) {
        std::fill(r.data, r.data + r.size, 0.0);
    }
}

void accumulate_sample(ModelGrads& dst, const SampleResult& s) {
    auto dst_cell = tensor_refs(dst.cell);
    auto src_cell = tensor_refs(s.cell_grads);
    for (std::size_t k = 0; k < dst_cell.size(); ++k) {
        for (std::size_t i = 0; i < dst_cell[k].size; ++i) {
            dst_cell[k].data[i] += src_cell[k].data[i];
        }
    }
    for (std::size_t i = 0; i < dst.head.w_out.data.size(); ++i) {
        dst.head.w_out.data[i] += s.dw_out.data[i];
    }
    for (std::size_t i = 0; i < dst.head.b_out.size(); ++i) {
        dst.head.b_out[i] += s.db_out[i];
    }
    if (dst.embedding) {
        for (const auto& [row, grad] : s.emb_grads.rows) {
            double* out = dst.embedding->data.data() +
                          static_cast<std::size_t>(row) * dst.embedding->cols;
            for (std::size_t i = 0; i < grad.size(); ++i) out[i] += grad[i];
        }
    }
}

void scale_grads(ModelGrads& g, double scale) {
    for (auto& r : grads_tensor_refs(g)) {
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= scale;
    }
}

}  // namespace

MetricsRecord train_epoch(const TrainConfig& cfg, Model& model, RmspropState& opt,
                          const Dataset& data, std::size_t epoch, double lr) {
    if (data.size() == 0) {
        throw std::invalid_argument("train_epoch: empty dataset");
    }
    const auto start = std::chrono::steady_clock::now();
    const auto batches =
        batch_iter(data.size(), cfg.batch_size, mix_seed(mix_seed(cfg.seed, kShuffleStream), epoch));

    ModelGrads batch_grads = make_zero_grads(model);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t position = 0;

    for (const auto& batch : batches) {
        std::vector<SampleResult> slots(batch.size());
        parallel_for(batch.size(), [&](std::size_t j) {
            Rng dropout_rng(
                mix_seed(mix_seed(mix_seed(cfg.seed, kDropoutStream), epoch), position + j));
            slots[j] = run_sample(model, data, batch[j], cfg.dropout_rate, &dropout_rng, true);
        });
        position += batch.size();

        zero_grads(batch_grads);
        for (const SampleResult& s : slots) {
            accumulate_sample(batch_grads, s);
            loss_sum += s.loss;
            correct += s.correct ? 1 : 0;
        }
        scale_grads(batch_grads, 1.0 / static_cast<double>(batch.size()));
        if (cfg.clip_norm) {
            clip_gradients(batch_grads, *cfg.clip_norm);
        }
        rmsprop_update(opt, model, batch_grads, lr);
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.split = Split::Train;
    rec.loss = loss_sum / static_cast<double>(data.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    rec.lr = lr;
    rec.wall_seconds = elapsed_seconds(start);
    return rec;
}

MetricsRecord evaluate(const Model& model, const Dataset& data, std::size_t epoch, double lr) {
    if (data.size() == 0) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> losses(data.size(), 0.0);
    std::vector<unsigned char> hits(data.size(), 0);
    parallel_for(data.size(), [&](std::size_t i) {
        SampleResult s = run_sample(model, data, i, 0.0, nullptr, false);
        losses[i] = s.loss;
        hits[i] = s.correct ? 1 : 0;
    });
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        loss_sum += losses[i];
        correct += hits[i];
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.split = Split::Test;
    rec.loss = loss_sum / static_cast<double>(data.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    rec.lr = lr;
    rec.wall_seconds = elapsed_seconds(start);
    return rec;
}

std::vector<MetricsRecord> run_training(const TrainConfig& cfg, Model& model,
                                        const Dataset& train, const Dataset& test,
                                        const std::function<void(const MetricsRecord&)>& sink) {
    RmspropState opt = make_rmsprop_state(model);
    std::vector<MetricsRecord> records;
    double prev_cost = 0.0;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const double lr =
            e == 1 ? cfg.base_lr : decay_learning_rate(cfg.base_lr, prev_cost);
        MetricsRecord tr = train_epoch(cfg, model, opt, train, e, lr);
        prev_cost = tr.loss;
        records.push_back(tr);
        if (sink) sink(tr);
        MetricsRecord te = evaluate(model, test, e, lr);
        records.push_back(te);
        if (sink) sink(te);
    }
    return records;
}

}  // namespace gruvar
