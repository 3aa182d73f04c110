#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gruvar {

using Vector = std::vector<double>;

// Thrown on any dimension mismatch; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Dense row-major double matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

enum class Activation { Sigmoid, Tanh, Relu };

// y = A x. matvec dispatches to the OpenMP kernel when the matrix is large
// enough and more than one thread is allowed; matvec_serial is the plain-loop
// reference the parallel kernel is tested against (results are bit-identical:
// each output row is an independently ordered dot product).
Vector matvec(const Matrix& a, const Vector& x);
Vector matvec_serial(const Matrix& a, const Vector& x);

// y = A^T x (x has a.rows entries, result has a.cols).
Vector matvec_transpose(const Matrix& a, const Vector& x);
Vector matvec_transpose_serial(const Matrix& a, const Vector& x);

// A += u v^T. Rank-one gradient accumulation for weight matrices.
void add_outer(Matrix& a, const Vector& u, const Vector& v);
void add_outer_serial(Matrix& a, const Vector& u, const Vector& v);

Vector hadamard(const Vector& a, const Vector& b);

void add_inplace(Vector& a, const Vector& b);
Vector add(const Vector& a, const Vector& b);

double sigmoid(double v);

Vector activate(Activation kind, const Vector& x);

// Derivative of the activation expressed through its own output: sigmoid
// s(1-s), tanh 1-t^2, relu [out > 0] (so the relu subgradient at 0 is 0).
double activation_derivative_from_output(Activation kind, double out);

Vector softmax(const Vector& logits);

std::string activation_name(Activation kind);

namespace detail {
void check_matvec_shapes(const Matrix& a, const Vector& x, bool transposed);
}

}  // namespace gruvar
