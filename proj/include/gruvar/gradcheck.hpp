#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gruvar/cells.hpp"
#include "gruvar/linalg.hpp"

namespace gruvar {

// |a-b| / max(|a|, |b|, 1e-8); the floor keeps near-zero gradients from
// producing spurious failures.
double relative_error(double a, double b);

struct TensorCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<TensorCheckResult> tensors;
    double tolerance = 0.0;
    bool pass = false;  // true iff every tensor's max_rel_err <= tolerance
    std::uint64_t seed = 0;
    std::string label;
};

// Central differences (L(theta+eps e_i) - L(theta-eps e_i)) / 2 eps for every
// entry of params. loss_fn must read the parameters through the same buffer
// and be deterministic; a non-finite loss is rejected naming the perturbed
// index.
Vector finite_difference_gradient(const std::function<double()>& loss_fn,
                                  std::span<double> params, double eps = 1e-5);

struct NamedVector {
    std::string name;
    Vector values;
};

GradCheckReport compare_gradients(const std::vector<NamedVector>& analytic,
                                  const std::vector<NamedVector>& numeric, double tolerance);

struct CellCheckSpec {
    CellKind kind = CellKind::Gru;
    GateVariant variant = GateVariant::Full;
    CellDims dims{4, 3};
    std::size_t timesteps = 5;
    std::uint64_t seed = 0;
    double tolerance = 1e-5;
    double epsilon = 1e-5;
    Activation activation = Activation::Tanh;
    std::size_t classes = 3;
    std::size_t embedding_vocab = 0;  // > 0 checks embedding rows instead of raw inputs
    double inject_error = 0.0;  // testing aid: offset added to one analytic entry
};

// Builds a random instance (cell, fixed random softmax head, inputs, target),
// computes the analytic BPTT gradients and compares every parameter tensor,
// the head, the inputs (or embedding rows), against central differences.
// For ReLU the instance is deterministically resampled until every
// g pre-activation magnitude exceeds 1e-4, so the finite-difference step
// cannot straddle the kink.
GradCheckReport check_cell_gradients(const CellCheckSpec& spec);

}  // namespace gruvar
