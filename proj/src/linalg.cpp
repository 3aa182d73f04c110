#include "gruvar/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "gruvar/parallel.hpp"

namespace gruvar {

namespace detail {

void check_matvec_shapes(const Matrix& a, const Vector& x, bool transposed) {
    const std::size_t need = transposed ? a.rows : a.cols;
    if (need != x.size()) {
        throw ShapeError("matvec: matrix " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + (transposed ? "^T" : "") +
                         " incompatible with vector of length " +
                         std::to_string(x.size()));
    }
}

// Row-parallel kernels stay worthwhile only for fairly large matrices; below
// this entry count the fork/join overhead dominates (measured with the bench
// tool). Batch-level parallelism in the epoch loop is the primary lever.
constexpr std::size_t kParallelCutoff = 512 * 1024;

}  // namespace detail

Vector matvec_serial(const Matrix& a, const Vector& x) {
    detail::check_matvec_shapes(a, x, false);
    Vector y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.data.data() + i * a.cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

Vector matvec(const Matrix& a, const Vector& x) {
    detail::check_matvec_shapes(a, x, false);
    if (max_threads() <= 1 || a.size() < detail::kParallelCutoff) {
        return matvec_serial(a, x);
    }
    Vector y(a.rows, 0.0);
    parallel_for(a.rows, [&](std::size_t i) {
        const double* row = a.data.data() + i * a.cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    });
    return y;
}

Vector matvec_transpose_serial(const Matrix& a, const Vector& x) {
    detail::check_matvec_shapes(a, x, true);
    Vector y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.data.data() + i * a.cols;
        const double xi = x[i];
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += row[j] * xi;
    }
    return y;
}

Vector matvec_transpose(const Matrix& a, const Vector& x) {
    detail::check_matvec_shapes(a, x, true);
    if (max_threads() <= 1 || a.size() < detail::kParallelCutoff) {
        return matvec_transpose_serial(a, x);
    }
    // Column-parallel: y[j] sums rows in the same order as the serial kernel.
    Vector y(a.cols, 0.0);
    parallel_for(a.cols, [&](std::size_t j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) acc += a.data[i * a.cols + j] * x[i];
        y[j] = acc;
    });
    return y;
}

void add_outer_serial(Matrix& a, const Vector& u, const Vector& v) {
    if (a.rows != u.size() || a.cols != v.size()) {
        throw ShapeError("add_outer: matrix " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " incompatible with outer product " +
                         std::to_string(u.size()) + "x" + std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* row = a.data.data() + i * a.cols;
        const double ui = u[i];
        for (std::size_t j = 0; j < a.cols; ++j) row[j] += ui * v[j];
    }
}

void add_outer(Matrix& a, const Vector& u, const Vector& v) {
    if (max_threads() <= 1 || a.size() < detail::kParallelCutoff) {
        add_outer_serial(a, u, v);
        return;
    }
    if (a.rows != u.size() || a.cols != v.size()) {
        throw ShapeError("add_outer: matrix " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " incompatible with outer product " +
                         std::to_string(u.size()) + "x" + std::to_string(v.size()));
    }
    parallel_for(a.rows, [&](std::size_t i) {
        double* row = a.data.data() + i * a.cols;
        const double ui = u[i];
        for (std::size_t j = 0; j < a.cols; ++j) row[j] += ui * v[j];
    });
}

Vector hadamard(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw ShapeError("hadamard: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
    }
    Vector y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
    return y;
}

void add_inplace(Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw ShapeError("add: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Vector add(const Vector& a, const Vector& b) {
    Vector y = a;
    add_inplace(y, b);
    return y;
}

double sigmoid(double v) {
    // Branch form: the exponent argument is never positive, so exp cannot
    // overflow and the result saturates cleanly at 0 or 1.
    if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

Vector activate(Activation kind, const Vector& x) {
    Vector y(x.size());
    switch (kind) {
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
    }
    return y;
}

double activation_derivative_from_output(Activation kind, double out) {
    switch (kind) {
        case Activation::Sigmoid:
            return out * (1.0 - out);
        case Activation::Tanh:
            return 1.0 - out * out;
        case Activation::Relu:
            return out > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

Vector softmax(const Vector& logits) {
    if (logits.empty()) {
        throw ShapeError("softmax: empty input");
    }
    Vector y(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        y[i] = std::exp(logits[i] - m);
        sum += y[i];
    }
    for (double& v : y) v /= sum;
    return y;
}

std::string activation_name(Activation kind) {
    switch (kind) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    return "?";
}

}  // namespace gruvar
