#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gruvar/train.hpp"

namespace gruvar {

class ModelIoError : public std::runtime_error {
public:
    explicit ModelIoError(const std::string& what) : std::runtime_error(what) {}
};

// Self-describing binary container: magic, format version byte, cell kind,
// gate variant, activation, loss kind, dims, head width, optional embedding
// dims, then every tensor as (name, length, raw little-endian doubles) in
// model_tensor_refs order.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// Shortest round-trip formatting for doubles (%.17g).
std::string format_double(double v);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& rec);

// key=value lines in insertion order.
std::string format_manifest(const std::vector<std::pair<std::string, std::string>>& entries);

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

}  // namespace gruvar
