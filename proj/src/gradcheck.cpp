#include "gruvar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "gruvar/rng.hpp"
#include "gruvar/train.hpp"

namespace gruvar {

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

Vector finite_difference_gradient(const std::function<double()>& loss_fn,
                                  std::span<double> params, double eps) {
    if (eps <= 0.0) {
        throw std::invalid_argument("finite_difference_gradient: eps must be positive");
    }
    Vector grad(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double up = loss_fn();
        params[i] = saved - eps;
        const double down = loss_fn();
        params[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::domain_error(
                "finite_difference_gradient: non-finite loss when perturbing index " +
                std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

GradCheckReport compare_gradients(const std::vector<NamedVector>& analytic,
                                  const std::vector<NamedVector>& numeric, double tolerance) {
    if (analytic.size() != numeric.size()) {
        throw std::invalid_argument("compare_gradients: tensor counts differ");
    }
    GradCheckReport report;
    report.tolerance = tolerance;
    report.pass = true;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        if (analytic[k].name != numeric[k].name ||
            analytic[k].values.size() != numeric[k].values.size()) {
            throw std::invalid_argument("compare_gradients: tensor mismatch at " +
                                        analytic[k].name);
        }
        TensorCheckResult t;
        t.name = analytic[k].name;
        for (std::size_t i = 0; i < analytic[k].values.size(); ++i) {
            const double rel = relative_error(analytic[k].values[i], numeric[k].values[i]);
            const double abs_err = std::abs(analytic[k].values[i] - numeric[k].values[i]);
            if (rel > t.max_rel_err) {
                t.max_rel_err = rel;
                t.worst_index = i;
            }
            t.max_abs_err = std::max(t.max_abs_err, abs_err);
        }
        if (t.max_rel_err > tolerance) report.pass = false;
        report.tensors.push_back(std::move(t));
    }
    return report;
}

namespace {

struct CheckInstance {
    CellParams cell;
    HeadParams head;
    std::optional<EmbeddingTable> embedding;
    std::vector<int> token_ids;
    std::vector<Vector> xs;  // direct inputs (non-embedding mode)
    int target = 0;
};

CheckInstance build_instance(const CellCheckSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    CheckInstance inst;
    inst.cell = make_cell_params(spec.kind, spec.variant, spec.dims);
    for (auto& ref : tensor_refs(inst.cell)) {
        for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = rng.uniform(-0.3, 0.3);
    }
    inst.head.w_out = Matrix(spec.classes, spec.dims.hidden);
    for (double& v : inst.head.w_out.data) v = rng.uniform(-0.15, 0.15);
    inst.head.b_out = Vector(spec.classes, 0.0);
    for (double& v : inst.head.b_out) v = rng.uniform(-0.15, 0.15);
    inst.target = static_cast<int>(rng.uniform_index(spec.classes));

    if (spec.embedding_vocab > 0) {
        inst.embedding = make_embedding(spec.embedding_vocab, spec.dims.input);
        for (double& v : inst.embedding->rows.data) v = rng.uniform(-0.8, 0.8);
        inst.token_ids.resize(spec.timesteps);
        for (auto& id : inst.token_ids) {
            id = static_cast<int>(rng.uniform_index(spec.embedding_vocab));
        }
        // keep the final step a real token so the head always sees content
        if (inst.token_ids.back() == kReviewPadId) inst.token_ids.back() = kReviewOovId;
    } else {
        inst.xs.assign(spec.timesteps, Vector(spec.dims.input, 0.0));
        for (auto& x : inst.xs) {
            for (double& v : x) v = rng.uniform(-0.8, 0.8);
        }
    }
    return inst;
}

std::vector<Vector> instance_steps(const CheckInstance& inst) {
    if (inst.embedding) {
        return embedding_forward(*inst.embedding, inst.token_ids, kReviewPadId);
    }
    return inst.xs;
}

double instance_loss(const CheckInstance& inst, Activation g) {
    const std::vector<Vector> steps = instance_steps(inst);
    CellForward fwd = cell_sequence_forward(inst.cell, steps, g);
    const Vector probs = head_forward(inst.head, fwd.h_seq.back(), LossKind::CategoricalCe);
    return loss_value(LossKind::CategoricalCe, probs, inst.target);
}

std::vector<NamedVector> analytic_gradients(const CheckInstance& inst,
                                            const CellCheckSpec& spec,
                                            const CellForward& fwd) {
    const std::vector<Vector> steps = instance_steps(inst);
    const Vector probs = head_forward(inst.head, fwd.h_seq.back(), LossKind::CategoricalCe);
    HeadBackward hb =
        head_backward(inst.head, fwd.h_seq.back(), probs, inst.target, LossKind::CategoricalCe);
    std::vector<Vector> dh_seq(steps.size(), Vector(spec.dims.hidden, 0.0));
    dh_seq.back() = hb.dh;
    CellBackward cb =
        cell_sequence_backward(inst.cell, fwd.caches, steps, dh_seq, spec.activation);

    std::vector<NamedVector> analytic;
    for (const auto& ref : tensor_refs(std::as_const(cb.grads))) {
        analytic.push_back(NamedVector{ref.name, Vector(ref.data, ref.data + ref.size)});
    }
    analytic.push_back(NamedVector{"head_w", hb.dw_out.data});
    analytic.push_back(NamedVector{"head_b", hb.db_out});
    if (inst.embedding) {
        Matrix dense(inst.embedding->vocab, inst.embedding->dim);
        EmbeddingGrad eg =
            embedding_backward(inst.token_ids, cb.dx_seq, kReviewPadId, *inst.embedding);
        for (const auto& [row, grad] : eg.rows) {
            double* out =
                dense.data.data() + static_cast<std::size_t>(row) * dense.cols;
            for (std::size_t i = 0; i < grad.size(); ++i) out[i] += grad[i];
        }
        analytic.push_back(NamedVector{"embedding", dense.data});
    } else {
        for (std::size_t t = 0; t < cb.dx_seq.size(); ++t) {
            analytic.push_back(NamedVector{"x[" + std::to_string(t) + "]", cb.dx_seq[t]});
        }
    }
    return analytic;
}

// The instance must keep the loss well away from the cross-entropy clamp
// and, for ReLU, every g pre-activation away from the kink so the difference
// step cannot straddle it.
bool instance_usable(const CheckInstance& inst, const CellCheckSpec& spec) {
    const std::vector<Vector> steps = instance_steps(inst);
    CellForward fwd = cell_sequence_forward(inst.cell, steps, spec.activation);
    if (spec.activation == Activation::Relu &&
        min_abs_preactivation(fwd.caches) <= 1e-4) {
        return false;
    }
    const Vector probs = head_forward(inst.head, fwd.h_seq.back(), LossKind::CategoricalCe);
    if (*std::min_element(probs.begin(), probs.end()) <= 1e-9) return false;
    return loss_value(LossKind::CategoricalCe, probs, inst.target) <= 6.0;
}

// Central differences at eps resolve gradients only down to about
// ulp(L)/(2 eps) ~ 1e-11. An instance occasionally has a true gradient entry
// between that noise floor and the 1e-8 report floor; such entries fail the
// relative test for any correct implementation. They are identified by both
// sides being tiny AND the disagreement being at noise scale, and the
// instance is resampled. A wrong backward pass disagrees at the scale of the
// gradients themselves and is never resampled away.
bool only_sub_resolution_failures(const std::vector<NamedVector>& analytic,
                                  const std::vector<NamedVector>& numeric, double tolerance) {
    bool any_failure = false;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        for (std::size_t i = 0; i < analytic[k].values.size(); ++i) {
            const double a = analytic[k].values[i];
            const double b = numeric[k].values[i];
            if (relative_error(a, b) <= tolerance) continue;
            any_failure = true;
            if (std::max(std::abs(a), std::abs(b)) >= 1e-5 || std::abs(a - b) >= 1e-9) {
                return false;
            }
        }
    }
    return any_failure;
}

}  // namespace

GradCheckReport check_cell_gradients(const CellCheckSpec& spec) {
    GradCheckReport report;
    std::uint64_t derived_seed = spec.seed;
    std::size_t usability_attempts = 0;

    for (std::size_t attempt = 0; attempt < 20; ++attempt) {
        CheckInstance inst = build_instance(spec, derived_seed);
        while (!instance_usable(inst, spec)) {
            if (++usability_attempts > 200) {
                throw std::runtime_error(
                    "check_cell_gradients: could not sample a usable instance");
            }
            derived_seed = mix_seed(spec.seed, 0x5eed + usability_attempts);
            inst = build_instance(spec, derived_seed);
        }

        CellForward fwd =
            cell_sequence_forward(inst.cell, instance_steps(inst), spec.activation);
        std::vector<NamedVector> analytic = analytic_gradients(inst, spec, fwd);
        if (spec.inject_error != 0.0 && !analytic.empty() &&
            !analytic.front().values.empty()) {
            analytic.front().values.front() += spec.inject_error;
        }

        auto loss_fn = [&]() { return instance_loss(inst, spec.activation); };
        std::vector<NamedVector> numeric;
        for (auto& ref : tensor_refs(inst.cell)) {
            numeric.push_back(NamedVector{
                ref.name,
                finite_difference_gradient(loss_fn, {ref.data, ref.size}, spec.epsilon)});
        }
        numeric.push_back(NamedVector{
            "head_w", finite_difference_gradient(
                          loss_fn, {inst.head.w_out.data.data(), inst.head.w_out.data.size()},
                          spec.epsilon)});
        numeric.push_back(NamedVector{
            "head_b",
            finite_difference_gradient(loss_fn, {inst.head.b_out.data(), inst.head.b_out.size()},
                                       spec.epsilon)});
        if (inst.embedding) {
            numeric.push_back(NamedVector{
                "embedding",
                finite_difference_gradient(
                    loss_fn,
                    {inst.embedding->rows.data.data(), inst.embedding->rows.data.size()},
                    spec.epsilon)});
        } else {
            for (std::size_t t = 0; t < inst.xs.size(); ++t) {
                numeric.push_back(NamedVector{
                    "x[" + std::to_string(t) + "]",
                    finite_difference_gradient(loss_fn, {inst.xs[t].data(), inst.xs[t].size()},
                                               spec.epsilon)});
            }
        }

        report = compare_gradients(analytic, numeric, spec.tolerance);
        if (report.pass || !only_sub_resolution_failures(analytic, numeric, spec.tolerance)) {
            break;
        }
        derived_seed = mix_seed(spec.seed, 0xbad + attempt);
    }

    report.seed = spec.seed;
    report.label = cell_kind_name(spec.kind) +
                   (spec.kind == CellKind::Gru ? "/" + variant_name(spec.variant) : "") + "/" +
                   activation_name(spec.activation) + "/seed" + std::to_string(spec.seed) +
                   (spec.embedding_vocab > 0 ? "/emb" : "");
    return report;
}

}  // namespace gruvar
