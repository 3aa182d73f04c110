#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gruvar/linalg.hpp"

namespace gruvar {

// Raised by the loaders; the message names the file and the byte offset or
// line where parsing failed.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct MnistImage {
    std::vector<double> pixels;  // 784 values in [0,1], row-major 28x28
    int label = 0;               // 0..9
};

struct SequenceSample {
    std::vector<Vector> steps;
    int target = 0;
};

struct ReviewRecord {
    std::vector<int> token_ids;  // exactly maxlen after padding/truncation
    int label = 0;               // 0 or 1
};

inline constexpr int kReviewPadId = 0;
inline constexpr int kReviewOovId = 1;

// IDX container pair (magic 2051 images / 2049 labels, big-endian headers).
// Plain or gzip files are both accepted; gzip is detected from the 1f 8b
// magic bytes.
std::vector<MnistImage> load_mnist_idx(const std::string& images_path,
                                       const std::string& labels_path);

// 28x28 image as 784 single-pixel steps, scanned left-to-right, top-to-bottom.
SequenceSample to_pixel_sequence(const MnistImage& img);

// 28x28 image as 28 row-vector steps.
SequenceSample to_row_sequence(const MnistImage& img);

// One record per line: label<TAB>space-separated decimal ids. Ids >= vocab
// become the out-of-vocabulary id; sequences keep their last maxlen tokens
// and are left-padded with pad_id so the final timestep carries content.
std::vector<ReviewRecord> load_token_reviews(const std::string& path, std::size_t vocab = 20000,
                                             std::size_t maxlen = 80, int pad_id = kReviewPadId);

// Seeded shuffle of [0, count) chopped into batches; the final short batch is
// kept. Identical seed gives identical order.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t seed);

enum class Task { MnistPixel, MnistRow, Reviews };

std::string task_name(Task t);

// A loaded dataset plus the sequence view the task prescribes. MNIST samples
// are materialized per access so pixel-wise runs do not hold 784-step
// sequences for every image at once.
struct Dataset {
    Task task = Task::MnistRow;
    std::vector<MnistImage> images;
    std::vector<ReviewRecord> reviews;

    std::size_t size() const {
        return task == Task::Reviews ? reviews.size() : images.size();
    }
    bool token_based() const { return task == Task::Reviews; }
    int target(std::size_t i) const;
    SequenceSample sequence(std::size_t i) const;  // MNIST tasks only
    void truncate(std::size_t limit);
};

}  // namespace gruvar
