#include "gruvar/cells.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace gruvar {

namespace {

// Gate outputs are kept strictly inside (0,1) even for saturating inputs, so
// cached gate values always satisfy the open-interval contract.
double gate_sigmoid(double v) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - 0x1.0p-53;
    return std::clamp(sigmoid(v), lo, hi);
}

Vector gate_activate(const Vector& pre) {
    Vector y(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) y[i] = gate_sigmoid(pre[i]);
    return y;
}

// Kink-margin helper: exact zeros are skipped. They arise when a dead relu
// feeds a product chain (e.g. an LSTM cell state at t=0 whose candidate is
// inactive); the function is locally flat there, not near a kink, as long as
// every nonzero pre-activation keeps its own margin.
double min_abs(const Vector& v, double acc) {
    for (double x : v) {
        if (x != 0.0) acc = std::min(acc, std::abs(x));
    }
    return acc;
}

void check_vec(const Vector& v, std::size_t len, const char* name) {
    if (v.size() != len) {
        throw ShapeError(std::string(name) + ": expected length " + std::to_string(len) +
                         ", got " + std::to_string(v.size()));
    }
}

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows, m.cols); }
Vector vec_zeros_like(const Vector& v) { return Vector(v.size(), 0.0); }

GruGateParams gate_zeros_like(const GruGateParams& g) {
    GruGateParams out;
    if (g.w) out.w = zeros_like(*g.w);
    if (g.u) out.u = zeros_like(*g.u);
    if (g.b) out.b = vec_zeros_like(*g.b);
    return out;
}

// z_t / r_t pre-activation with only the variant's terms. Terms are summed
// in the fixed order W x, U h, b so the variant-degeneracy equivalence holds
// bitwise against a Full gate with the corresponding tensors zeroed.
Vector gru_gate_pre(const GruGateParams& gp, const Vector& x, const Vector& h_prev,
                    std::size_t n) {
    Vector pre(n, 0.0);
    if (gp.w) add_inplace(pre, matvec(*gp.w, x));
    if (gp.u) add_inplace(pre, matvec(*gp.u, h_prev));
    if (gp.b) add_inplace(pre, *gp.b);
    return pre;
}

void check_gate(const GruGateParams& g, GateVariant v, CellDims dims, const char* which) {
    const bool want_w = v == GateVariant::Full;
    const bool want_u = v != GateVariant::BiasOnly;
    const bool want_b = v == GateVariant::Full || v == GateVariant::StateBias ||
                        v == GateVariant::BiasOnly;
    auto fail = [&](const std::string& what) {
        throw VariantError("gru gate " + std::string(which) + " (" + variant_name(v) +
                           "): " + what);
    };
    if (g.w.has_value() != want_w) fail(want_w ? "W missing" : "W present but unused");
    if (g.u.has_value() != want_u) fail(want_u ? "U missing" : "U present but unused");
    if (g.b.has_value() != want_b) fail(want_b ? "b missing" : "b present but unused");
    if (g.w && (g.w->rows != dims.hidden || g.w->cols != dims.input)) fail("W shape mismatch");
    if (g.u && (g.u->rows != dims.hidden || g.u->cols != dims.hidden)) fail("U shape mismatch");
    if (g.b && g.b->size() != dims.hidden) fail("b shape mismatch");
}

void check_lstm_gate(const LstmGate& g, CellDims dims, const char* which) {
    if (g.w.rows != dims.hidden || g.w.cols != dims.input || g.u.rows != dims.hidden ||
        g.u.cols != dims.hidden || g.b.size() != dims.hidden) {
        throw ShapeError("lstm gate " + std::string(which) + ": inconsistent shapes");
    }
}

LstmGate make_lstm_gate(CellDims dims) {
    return LstmGate{Matrix(dims.hidden, dims.input), Matrix(dims.hidden, dims.hidden),
                    Vector(dims.hidden, 0.0)};
}

}  // namespace

std::string cell_kind_name(CellKind kind) {
    switch (kind) {
        case CellKind::Rnn: return "rnn";
        case CellKind::Lstm: return "lstm";
        case CellKind::Gru: return "gru";
    }
    return "?";
}

std::string variant_name(GateVariant v) {
    switch (v) {
        case GateVariant::Full: return "gru0";
        case GateVariant::StateBias: return "gru1";
        case GateVariant::StateOnly: return "gru2";
        case GateVariant::BiasOnly: return "gru3";
    }
    return "?";
}

void validate_gru_params(const GruParams& p) {
    const CellDims dims{p.w_h.rows, p.w_h.cols};
    if (p.u_h.rows != dims.hidden || p.u_h.cols != dims.hidden || p.b_h.size() != dims.hidden) {
        throw ShapeError("gru candidate: inconsistent shapes");
    }
    check_gate(p.update, p.variant, dims, "z");
    check_gate(p.reset, p.variant, dims, "r");
}

// ---- steps ----

RnnStepResult simple_rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev,
                              Activation g) {
    check_vec(x, p.w.cols, "rnn x");
    check_vec(h_prev, p.u.cols, "rnn h_prev");
    RnnStepCache cache;
    cache.h_prev = h_prev;
    cache.pre = matvec(p.w, x);
    add_inplace(cache.pre, matvec(p.u, h_prev));
    add_inplace(cache.pre, p.b);
    cache.h = activate(g, cache.pre);
    cache.min_abs_pre = min_abs(cache.pre, std::numeric_limits<double>::infinity());
    return {cache.h, std::move(cache)};
}

LstmStepResult lstm_step(const LstmParams& p, const Vector& x, const Vector& h_prev,
                         const Vector& c_prev, Activation g) {
    const CellDims dims{p.candidate.w.rows, p.candidate.w.cols};
    check_lstm_gate(p.input_gate, dims, "i");
    check_lstm_gate(p.forget_gate, dims, "f");
    check_lstm_gate(p.output_gate, dims, "o");
    check_lstm_gate(p.candidate, dims, "c");
    check_vec(x, dims.input, "lstm x");
    check_vec(h_prev, dims.hidden, "lstm h_prev");
    check_vec(c_prev, dims.hidden, "lstm c_prev");

    auto gate_pre = [&](const LstmGate& gate) {
        Vector pre = matvec(gate.w, x);
        add_inplace(pre, matvec(gate.u, h_prev));
        add_inplace(pre, gate.b);
        return pre;
    };

    LstmStepCache cache;
    cache.h_prev = h_prev;
    cache.c_prev = c_prev;
    cache.i = gate_activate(gate_pre(p.input_gate));
    cache.f = gate_activate(gate_pre(p.forget_gate));
    cache.o = gate_activate(gate_pre(p.output_gate));
    cache.pre_c = gate_pre(p.candidate);
    cache.c_bar = activate(g, cache.pre_c);

    const std::size_t n = dims.hidden;
    cache.c.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        cache.c[k] = cache.f[k] * c_prev[k] + cache.i[k] * cache.c_bar[k];
    }
    cache.g_c = activate(g, cache.c);
    Vector h(n);
    for (std::size_t k = 0; k < n; ++k) h[k] = cache.o[k] * cache.g_c[k];

    cache.min_abs_pre = min_abs(cache.pre_c, std::numeric_limits<double>::infinity());
    cache.min_abs_pre = min_abs(cache.c, cache.min_abs_pre);
    Vector c = cache.c;
    return {std::move(h), std::move(c), std::move(cache)};
}

GruStepResult gru_step(const GruParams& p, const Vector& x, const Vector& h_prev, Activation g) {
    validate_gru_params(p);
    const CellDims dims{p.w_h.rows, p.w_h.cols};
    check_vec(x, dims.input, "gru x");
    check_vec(h_prev, dims.hidden, "gru h_prev");
    const std::size_t n = dims.hidden;

    GruStepCache cache;
    cache.h_prev = h_prev;
    cache.z = gate_activate(gru_gate_pre(p.update, x, h_prev, n));
    cache.r = gate_activate(gru_gate_pre(p.reset, x, h_prev, n));
    cache.rh = hadamard(cache.r, h_prev);

    cache.pre_h = matvec(p.w_h, x);
    add_inplace(cache.pre_h, matvec(p.u_h, cache.rh));
    add_inplace(cache.pre_h, p.b_h);
    cache.h_bar = activate(g, cache.pre_h);

    Vector h(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double mixed = (1.0 - cache.z[k]) * h_prev[k] + cache.z[k] * cache.h_bar[k];
        // rounding may overshoot the interpolation interval by an ulp; h_t is
        // contractual: it lies between h_prev and h_bar componentwise
        h[k] = std::clamp(mixed, std::min(h_prev[k], cache.h_bar[k]),
                          std::max(h_prev[k], cache.h_bar[k]));
    }
    cache.min_abs_pre = min_abs(cache.pre_h, std::numeric_limits<double>::infinity());
    return {std::move(h), std::move(cache)};
}

// ---- sequence forward ----

namespace {

void check_nonempty(std::size_t t) {
    if (t == 0) throw std::invalid_argument("sequence_forward: empty sequence");
}

void check_bptt_lengths(std::size_t caches, std::size_t xs, std::size_t dhs) {
    if (caches != xs || caches != dhs) {
        throw std::invalid_argument("sequence_backward: caches/inputs/upstream lengths differ (" +
                                    std::to_string(caches) + "/" + std::to_string(xs) + "/" +
                                    std::to_string(dhs) + ")");
    }
}

}  // namespace

RnnSequenceResult rnn_sequence_forward(const RnnParams& p, const std::vector<Vector>& xs,
                                       const Vector& h0, Activation g) {
    check_nonempty(xs.size());
    RnnSequenceResult out;
    out.h_seq.reserve(xs.size());
    out.caches.reserve(xs.size());
    Vector h = h0;
    for (const Vector& x : xs) {
        auto step = simple_rnn_step(p, x, h, g);
        h = step.h;
        out.h_seq.push_back(std::move(step.h));
        out.caches.push_back(std::move(step.cache));
    }
    return out;
}

LstmSequenceResult lstm_sequence_forward(const LstmParams& p, const std::vector<Vector>& xs,
                                         const Vector& h0, const Vector& c0, Activation g) {
    check_nonempty(xs.size());
    LstmSequenceResult out;
    out.h_seq.reserve(xs.size());
    out.caches.reserve(xs.size());
    Vector h = h0;
    Vector c = c0;
    for (const Vector& x : xs) {
        auto step = lstm_step(p, x, h, c, g);
        h = step.h;
        c = step.c;
        out.h_seq.push_back(std::move(step.h));
        out.caches.push_back(std::move(step.cache));
    }
    return out;
}

GruSequenceResult gru_sequence_forward(const GruParams& p, const std::vector<Vector>& xs,
                                       const Vector& h0, Activation g) {
    check_nonempty(xs.size());
    GruSequenceResult out;
    out.h_seq.reserve(xs.size());
    out.caches.reserve(xs.size());
    Vector h = h0;
    for (const Vector& x : xs) {
        auto step = gru_step(p, x, h, g);
        h = step.h;
        out.h_seq.push_back(std::move(step.h));
        out.caches.push_back(std::move(step.cache));
    }
    return out;
}

// ---- sequence backward ----

RnnSequenceGrads rnn_sequence_backward(const RnnParams& p, const std::vector<RnnStepCache>& caches,
                                       const std::vector<Vector>& xs,
                                       const std::vector<Vector>& dh_seq, Activation g) {
    check_bptt_lengths(caches.size(), xs.size(), dh_seq.size());
    const std::size_t n = p.u.rows;
    RnnSequenceGrads out;
    out.params = RnnParams{zeros_like(p.w), zeros_like(p.u), vec_zeros_like(p.b)};
    out.dx_seq.assign(xs.size(), Vector(p.w.cols, 0.0));

    Vector carry(n, 0.0);
    for (std::size_t t = caches.size(); t-- > 0;) {
        const RnnStepCache& c = caches[t];
        Vector dh = add(dh_seq[t], carry);
        Vector da(n);
        for (std::size_t k = 0; k < n; ++k) {
            da[k] = dh[k] * activation_derivative_from_output(g, c.h[k]);
        }
        add_outer(out.params.w, da, xs[t]);
        add_outer(out.params.u, da, c.h_prev);
        add_inplace(out.params.b, da);
        out.dx_seq[t] = matvec_transpose(p.w, da);
        carry = matvec_transpose(p.u, da);
    }
    out.dh0 = std::move(carry);
    return out;
}

LstmSequenceGrads lstm_sequence_backward(const LstmParams& p,
                                         const std::vector<LstmStepCache>& caches,
                                         const std::vector<Vector>& xs,
                                         const std::vector<Vector>& dh_seq, Activation g) {
    check_bptt_lengths(caches.size(), xs.size(), dh_seq.size());
    const std::size_t n = p.candidate.w.rows;
    LstmSequenceGrads out;
    out.params = LstmParams{
        LstmGate{zeros_like(p.input_gate.w), zeros_like(p.input_gate.u),
                 vec_zeros_like(p.input_gate.b)},
        LstmGate{zeros_like(p.forget_gate.w), zeros_like(p.forget_gate.u),
                 vec_zeros_like(p.forget_gate.b)},
        LstmGate{zeros_like(p.output_gate.w), zeros_like(p.output_gate.u),
                 vec_zeros_like(p.output_gate.b)},
        LstmGate{zeros_like(p.candidate.w), zeros_like(p.candidate.u),
                 vec_zeros_like(p.candidate.b)}};
    out.dx_seq.assign(xs.size(), Vector(p.candidate.w.cols, 0.0));

    Vector dh_carry(n, 0.0);
    Vector dc_carry(n, 0.0);
    for (std::size_t t = caches.size(); t-- > 0;) {
        const LstmStepCache& c = caches[t];
        Vector dh = add(dh_seq[t], dh_carry);

        Vector dout(n), dc(n), di(n), df(n), dcbar(n);
        for (std::size_t k = 0; k < n; ++k) {
            dout[k] = dh[k] * c.g_c[k];
            const double dgc = dh[k] * c.o[k];
            dc[k] = dc_carry[k] + dgc * activation_derivative_from_output(g, c.g_c[k]);
            di[k] = dc[k] * c.c_bar[k];
            df[k] = dc[k] * c.c_prev[k];
            dcbar[k] = dc[k] * c.i[k];
        }
        for (std::size_t k = 0; k < n; ++k) dc_carry[k] = dc[k] * c.f[k];

        Vector da_i(n), da_f(n), da_o(n), da_c(n);
        for (std::size_t k = 0; k < n; ++k) {
            da_i[k] = di[k] * c.i[k] * (1.0 - c.i[k]);
            da_f[k] = df[k] * c.f[k] * (1.0 - c.f[k]);
            da_o[k] = dout[k] * c.o[k] * (1.0 - c.o[k]);
            da_c[k] = dcbar[k] * activation_derivative_from_output(g, c.c_bar[k]);
        }

        auto accumulate = [&](LstmGate& grad, const LstmGate& gate, const Vector& da) {
            add_outer(grad.w, da, xs[t]);
            add_outer(grad.u, da, c.h_prev);
            add_inplace(grad.b, da);
            add_inplace(out.dx_seq[t], matvec_transpose(gate.w, da));
            add_inplace(dh_carry, matvec_transpose(gate.u, da));
        };
        dh_carry.assign(n, 0.0);
        accumulate(out.params.input_gate, p.input_gate, da_i);
        accumulate(out.params.forget_gate, p.forget_gate, da_f);
        accumulate(out.params.output_gate, p.output_gate, da_o);
        accumulate(out.params.candidate, p.candidate, da_c);
    }
    out.dh0 = std::move(dh_carry);
    return out;
}

GruSequenceGrads gru_sequence_backward(const GruParams& p, const std::vector<GruStepCache>& caches,
                                       const std::vector<Vector>& xs,
                                       const std::vector<Vector>& dh_seq, Activation g) {
    check_bptt_lengths(caches.size(), xs.size(), dh_seq.size());
    validate_gru_params(p);
    const std::size_t n = p.w_h.rows;
    GruSequenceGrads out;
    out.params.variant = p.variant;
    out.params.w_h = zeros_like(p.w_h);
    out.params.u_h = zeros_like(p.u_h);
    out.params.b_h = vec_zeros_like(p.b_h);
    out.params.update = gate_zeros_like(p.update);
    out.params.reset = gate_zeros_like(p.reset);
    out.dx_seq.assign(xs.size(), Vector(p.w_h.cols, 0.0));

    Vector carry(n, 0.0);
    for (std::size_t t = caches.size(); t-- > 0;) {
        const GruStepCache& c = caches[t];
        Vector dh = add(dh_seq[t], carry);

        Vector dz(n), da_h(n), dh_prev(n);
        for (std::size_t k = 0; k < n; ++k) {
            dz[k] = dh[k] * (c.h_bar[k] - c.h_prev[k]);
            da_h[k] = dh[k] * c.z[k] * activation_derivative_from_output(g, c.h_bar[k]);
            dh_prev[k] = dh[k] * (1.0 - c.z[k]);
        }

        add_outer(out.params.w_h, da_h, xs[t]);
        add_outer(out.params.u_h, da_h, c.rh);
        add_inplace(out.params.b_h, da_h);

        const Vector drh = matvec_transpose(p.u_h, da_h);
        Vector dr(n);
        for (std::size_t k = 0; k < n; ++k) {
            dr[k] = drh[k] * c.h_prev[k];
            dh_prev[k] += drh[k] * c.r[k];
        }
        out.dx_seq[t] = matvec_transpose(p.w_h, da_h);

        Vector daz(n), dar(n);
        for (std::size_t k = 0; k < n; ++k) {
            daz[k] = dz[k] * c.z[k] * (1.0 - c.z[k]);
            dar[k] = dr[k] * c.r[k] * (1.0 - c.r[k]);
        }

        auto gate_backward = [&](GruGateParams& grad, const GruGateParams& gate,
                                 const Vector& da) {
            if (gate.w) {
                add_outer(*grad.w, da, xs[t]);
                add_inplace(out.dx_seq[t], matvec_transpose(*gate.w, da));
            }
            if (gate.u) {
                add_outer(*grad.u, da, c.h_prev);
                add_inplace(dh_prev, matvec_transpose(*gate.u, da));
            }
            if (gate.b) add_inplace(*grad.b, da);
        };
        gate_backward(out.params.update, p.update, daz);
        gate_backward(out.params.reset, p.reset, dar);

        carry = std::move(dh_prev);
    }
    out.dh0 = std::move(carry);
    return out;
}

// ---- type-erased wrappers ----

CellKind cell_kind_of(const CellParams& p) {
    if (std::holds_alternative<RnnParams>(p)) return CellKind::Rnn;
    if (std::holds_alternative<LstmParams>(p)) return CellKind::Lstm;
    return CellKind::Gru;
}

CellDims cell_dims(const CellParams& p) {
    return std::visit(
        [](const auto& cp) -> CellDims {
            using T = std::decay_t<decltype(cp)>;
            if constexpr (std::is_same_v<T, RnnParams>) {
                return {cp.w.rows, cp.w.cols};
            } else if constexpr (std::is_same_v<T, LstmParams>) {
                return {cp.candidate.w.rows, cp.candidate.w.cols};
            } else {
                return {cp.w_h.rows, cp.w_h.cols};
            }
        },
        p);
}

CellForward cell_sequence_forward(const CellParams& p, const std::vector<Vector>& xs,
                                  Activation g) {
    const std::size_t n = cell_dims(p).hidden;
    const Vector h0(n, 0.0);
    return std::visit(
        [&](const auto& cp) -> CellForward {
            using T = std::decay_t<decltype(cp)>;
            if constexpr (std::is_same_v<T, RnnParams>) {
                auto r = rnn_sequence_forward(cp, xs, h0, g);
                return {std::move(r.h_seq), std::move(r.caches)};
            } else if constexpr (std::is_same_v<T, LstmParams>) {
                auto r = lstm_sequence_forward(cp, xs, h0, Vector(n, 0.0), g);
                return {std::move(r.h_seq), std::move(r.caches)};
            } else {
                auto r = gru_sequence_forward(cp, xs, h0, g);
                return {std::move(r.h_seq), std::move(r.caches)};
            }
        },
        p);
}

CellBackward cell_sequence_backward(const CellParams& p, const CellCaches& caches,
                                    const std::vector<Vector>& xs,
                                    const std::vector<Vector>& dh_seq, Activation g) {
    return std::visit(
        [&](const auto& cp) -> CellBackward {
            using T = std::decay_t<decltype(cp)>;
            if constexpr (std::is_same_v<T, RnnParams>) {
                auto r = rnn_sequence_backward(cp, std::get<std::vector<RnnStepCache>>(caches),
                                               xs, dh_seq, g);
                return {CellParams(std::move(r.params)), std::move(r.dx_seq), std::move(r.dh0)};
            } else if constexpr (std::is_same_v<T, LstmParams>) {
                auto r = lstm_sequence_backward(cp, std::get<std::vector<LstmStepCache>>(caches),
                                                xs, dh_seq, g);
                return {CellParams(std::move(r.params)), std::move(r.dx_seq), std::move(r.dh0)};
            } else {
                auto r = gru_sequence_backward(cp, std::get<std::vector<GruStepCache>>(caches),
                                               xs, dh_seq, g);
                return {CellParams(std::move(r.params)), std::move(r.dx_seq), std::move(r.dh0)};
            }
        },
        p);
}

double min_abs_preactivation(const CellCaches& caches) {
    return std::visit(
        [](const auto& cs) {
            double acc = std::numeric_limits<double>::infinity();
            for (const auto& c : cs) acc = std::min(acc, c.min_abs_pre);
            return acc;
        },
        caches);
}

// ---- construction ----

CellParams make_cell_params(CellKind kind, GateVariant variant, CellDims dims) {
    switch (kind) {
        case CellKind::Rnn:
            return RnnParams{Matrix(dims.hidden, dims.input), Matrix(dims.hidden, dims.hidden),
                             Vector(dims.hidden, 0.0)};
        case CellKind::Lstm:
            return LstmParams{make_lstm_gate(dims), make_lstm_gate(dims), make_lstm_gate(dims),
                              make_lstm_gate(dims)};
        case CellKind::Gru: {
            GruParams p;
            p.variant = variant;
            p.w_h = Matrix(dims.hidden, dims.input);
            p.u_h = Matrix(dims.hidden, dims.hidden);
            p.b_h = Vector(dims.hidden, 0.0);
            auto make_gate = [&]() {
                GruGateParams g;
                if (variant == GateVariant::Full) g.w = Matrix(dims.hidden, dims.input);
                if (variant != GateVariant::BiasOnly) g.u = Matrix(dims.hidden, dims.hidden);
                if (variant != GateVariant::StateOnly) g.b = Vector(dims.hidden, 0.0);
                return g;
            };
            p.update = make_gate();
            p.reset = make_gate();
            return p;
        }
    }
    throw std::invalid_argument("make_cell_params: unknown cell kind");
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
    Matrix a(n, n);
    for (double& v : a.data) v = rng.normal();

    // Householder QR; reflectors are then applied to the identity to build Q,
    // and column signs follow sign(R_kk) so both orientations occur.
    std::vector<Vector> reflectors(n);
    Vector r_diag(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < n; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        const double akk = a(k, k);
        const double alpha = akk >= 0.0 ? -norm : norm;
        Vector v(n - k, 0.0);
        v[0] = akk - alpha;
        for (std::size_t i = k + 1; i < n; ++i) v[i - k] = a(i, k);
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        r_diag[k] = alpha;
        reflectors[k] = v;
        if (vnorm2 == 0.0) continue;
        for (std::size_t j = k; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < n; ++i) dot += v[i - k] * a(i, j);
            const double coef = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < n; ++i) a(i, j) -= coef * v[i - k];
        }
    }

    Matrix q = Matrix::identity(n);
    for (std::size_t kk = n; kk-- > 0;) {
        const Vector& v = reflectors[kk];
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = kk; i < n; ++i) dot += v[i - kk] * q(i, j);
            const double coef = 2.0 * dot / vnorm2;
            for (std::size_t i = kk; i < n; ++i) q(i, j) -= coef * v[i - kk];
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (r_diag[j] < 0.0) {
            for (std::size_t i = 0; i < n; ++i) q(i, j) = -q(i, j);
        }
    }
    return q;
}

namespace {

void glorot_fill(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    for (double& v : m.data) v = rng.uniform(-limit, limit);
}

}  // namespace

void init_cell_params(CellParams& p, Rng& rng) {
    std::visit(
        [&](auto& cp) {
            using T = std::decay_t<decltype(cp)>;
            if constexpr (std::is_same_v<T, RnnParams>) {
                glorot_fill(cp.w, rng);
                cp.u = random_orthogonal(cp.u.rows, rng);
                std::fill(cp.b.begin(), cp.b.end(), 0.0);
            } else if constexpr (std::is_same_v<T, LstmParams>) {
                for (LstmGate* g :
                     {&cp.input_gate, &cp.forget_gate, &cp.output_gate, &cp.candidate}) {
                    glorot_fill(g->w, rng);
                    g->u = random_orthogonal(g->u.rows, rng);
                    std::fill(g->b.begin(), g->b.end(), 0.0);
                }
            } else {
                glorot_fill(cp.w_h, rng);
                cp.u_h = random_orthogonal(cp.u_h.rows, rng);
                std::fill(cp.b_h.begin(), cp.b_h.end(), 0.0);
                for (GruGateParams* g : {&cp.update, &cp.reset}) {
                    if (g->w) glorot_fill(*g->w, rng);
                    if (g->u) *g->u = random_orthogonal(g->u->rows, rng);
                    if (g->b) std::fill(g->b->begin(), g->b->end(), 0.0);
                }
            }
        },
        p);
}

std::size_t param_count(CellKind kind, std::optional<GateVariant> variant, CellDims dims) {
    const std::size_t n = dims.hidden;
    const std::size_t m = dims.input;
    const std::size_t base = n * n + n * m + n;
    switch (kind) {
        case CellKind::Rnn: return base;
        case CellKind::Lstm: return 4 * base;
        case CellKind::Gru: {
            const std::size_t full = 3 * base;
            switch (variant.value_or(GateVariant::Full)) {
                case GateVariant::Full: return full;
                case GateVariant::StateBias: return full - 2 * n * m;
                case GateVariant::StateOnly: return full - 2 * (n * m + n);
                case GateVariant::BiasOnly: return full - 2 * (n * m + n * n);
            }
        }
    }
    throw std::invalid_argument("param_count: unknown cell kind");
}

// ---- tensor refs ----

namespace {

template <typename Ref, typename P>
std::vector<Ref> collect_refs(P& p) {
    std::vector<Ref> out;
    auto push_mat = [&out](const char* name, auto& m) {
        out.push_back(Ref{name, m.data.data(), m.data.size()});
    };
    auto push_vec = [&out](const char* name, auto& v) {
        out.push_back(Ref{name, v.data(), v.size()});
    };
    std::visit(
        [&](auto& cp) {
            using T = std::decay_t<decltype(cp)>;
            if constexpr (std::is_same_v<T, RnnParams>) {
                push_mat("w", cp.w);
                push_mat("u", cp.u);
                push_vec("b", cp.b);
            } else if constexpr (std::is_same_v<T, LstmParams>) {
                push_mat("w_i", cp.input_gate.w);
                push_mat("u_i", cp.input_gate.u);
                push_vec("b_i", cp.input_gate.b);
                push_mat("w_f", cp.forget_gate.w);
                push_mat("u_f", cp.forget_gate.u);
                push_vec("b_f", cp.forget_gate.b);
                push_mat("w_o", cp.output_gate.w);
                push_mat("u_o", cp.output_gate.u);
                push_vec("b_o", cp.output_gate.b);
                push_mat("w_c", cp.candidate.w);
                push_mat("u_c", cp.candidate.u);
                push_vec("b_c", cp.candidate.b);
            } else {
                push_mat("w_h", cp.w_h);
                push_mat("u_h", cp.u_h);
                push_vec("b_h", cp.b_h);
                if (cp.update.w) push_mat("w_z", *cp.update.w);
                if (cp.update.u) push_mat("u_z", *cp.update.u);
                if (cp.update.b) push_vec("b_z", *cp.update.b);
                if (cp.reset.w) push_mat("w_r", *cp.reset.w);
                if (cp.reset.u) push_mat("u_r", *cp.reset.u);
                if (cp.reset.b) push_vec("b_r", *cp.reset.b);
            }
        },
        p);
    return out;
}

}  // namespace

std::vector<TensorRef> tensor_refs(CellParams& p) { return collect_refs<TensorRef>(p); }

std::vector<ConstTensorRef> tensor_refs(const CellParams& p) {
    return collect_refs<ConstTensorRef>(p);
}

// ---- embedding ----

EmbeddingTable make_embedding(std::size_t vocab, std::size_t dim) {
    return EmbeddingTable{vocab, dim, Matrix(vocab, dim)};
}

void init_embedding(EmbeddingTable& t, Rng& rng, double scale) {
    for (double& v : t.rows.data) v = rng.uniform(-scale, scale);
}

std::vector<Vector> embedding_forward(const EmbeddingTable& t, std::span<const int> token_ids,
                                      int pad_id) {
    std::vector<Vector> out;
    out.reserve(token_ids.size());
    for (std::size_t pos = 0; pos < token_ids.size(); ++pos) {
        const int id = token_ids[pos];
        if (id == pad_id) {
            out.emplace_back(t.dim, 0.0);
            continue;
        }
        if (id < 0 || static_cast<std::size_t>(id) >= t.vocab) {
            throw std::out_of_range("embedding: token id " + std::to_string(id) +
                                    " at position " + std::to_string(pos) +
                                    " outside vocabulary of " + std::to_string(t.vocab));
        }
        const double* row = t.rows.data.data() + static_cast<std::size_t>(id) * t.dim;
        out.emplace_back(row, row + t.dim);
    }
    return out;
}

EmbeddingGrad embedding_backward(std::span<const int> token_ids,
                                 const std::vector<Vector>& upstream, int pad_id,
                                 const EmbeddingTable& t) {
    if (token_ids.size() != upstream.size()) {
        throw ShapeError("embedding_backward: " + std::to_string(token_ids.size()) +
                         " ids vs " + std::to_string(upstream.size()) + " upstream gradients");
    }
    std::map<int, Vector> acc;
    for (std::size_t pos = 0; pos < token_ids.size(); ++pos) {
        const int id = token_ids[pos];
        if (id == pad_id) continue;
        auto [it, inserted] = acc.try_emplace(id, Vector(t.dim, 0.0));
        add_inplace(it->second, upstream[pos]);
    }
    EmbeddingGrad grad;
    grad.rows.assign(acc.begin(), acc.end());
    return grad;
}

}  // namespace gruvar
