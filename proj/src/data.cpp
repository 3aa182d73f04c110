#include "gruvar/data.hpp"

#include <zlib.h>

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gruvar/rng.hpp"

namespace gruvar {

namespace {

// gzFile reads plain files transparently (gzip detected from the 1f 8b magic
// bytes), so one code path covers both encodings.
class IdxReader {
public:
    explicit IdxReader(const std::string& path) : path_(path) {
        file_ = gzopen(path.c_str(), "rb");
        if (file_ == nullptr) {
            throw DataError("idx: cannot open " + path);
        }
    }
    ~IdxReader() {
        if (file_ != nullptr) gzclose(file_);
    }
    IdxReader(const IdxReader&) = delete;
    IdxReader& operator=(const IdxReader&) = delete;

    void read(void* dst, std::size_t len) {
        const int got = gzread(file_, dst, static_cast<unsigned>(len));
        if (got < 0 || static_cast<std::size_t>(got) != len) {
            throw DataError("idx: " + path_ + " truncated at offset " +
                            std::to_string(offset_ + (got > 0 ? got : 0)));
        }
        offset_ += len;
    }

    std::uint32_t read_u32_be() {
        std::array<unsigned char, 4> b{};
        read(b.data(), 4);
        return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
               (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
    }

    bool at_eof() {
        char probe;
        const int got = gzread(file_, &probe, 1);
        return got == 0;
    }

    const std::string& path() const { return path_; }
    std::size_t offset() const { return offset_; }

private:
    std::string path_;
    gzFile file_ = nullptr;
    std::size_t offset_ = 0;
};

}  // namespace

std::vector<MnistImage> load_mnist_idx(const std::string& images_path,
                                       const std::string& labels_path) {
    IdxReader images(images_path);
    const std::uint32_t img_magic = images.read_u32_be();
    if (img_magic != 2051) {
        throw DataError("idx: " + images_path + " has magic " + std::to_string(img_magic) +
                        " at offset 0, expected 2051 (image file)");
    }
    const std::uint32_t count = images.read_u32_be();
    const std::uint32_t rows = images.read_u32_be();
    const std::uint32_t cols = images.read_u32_be();
    if (rows != 28 || cols != 28) {
        throw DataError("idx: " + images_path + " has " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " images, expected 28x28");
    }

    IdxReader labels(labels_path);
    const std::uint32_t lbl_magic = labels.read_u32_be();
    if (lbl_magic != 2049) {
        throw DataError("idx: " + labels_path + " has magic " + std::to_string(lbl_magic) +
                        " at offset 0, expected 2049 (label file)");
    }
    const std::uint32_t lbl_count = labels.read_u32_be();
    if (lbl_count != count) {
        throw DataError("idx: count mismatch between " + images_path + " (" +
                        std::to_string(count) + ") and " + labels_path + " (" +
                        std::to_string(lbl_count) + ")");
    }

    std::vector<MnistImage> out(count);
    std::vector<unsigned char> pixel_buf(784);
    for (std::uint32_t i = 0; i < count; ++i) {
        images.read(pixel_buf.data(), pixel_buf.size());
        unsigned char label = 0;
        labels.read(&label, 1);
        if (label > 9) {
            throw DataError("idx: " + labels_path + " label " + std::to_string(int(label)) +
                            " at offset " + std::to_string(labels.offset() - 1) +
                            " outside 0..9");
        }
        MnistImage& img = out[i];
        img.label = label;
        img.pixels.resize(784);
        for (std::size_t p = 0; p < 784; ++p) {
            img.pixels[p] = static_cast<double>(pixel_buf[p]) / 255.0;
        }
    }
    if (!images.at_eof()) {
        throw DataError("idx: " + images_path + " has trailing bytes after " +
                        std::to_string(count) + " images (offset " +
                        std::to_string(images.offset()) + ")");
    }
    return out;
}

SequenceSample to_pixel_sequence(const MnistImage& img) {
    SequenceSample s;
    s.target = img.label;
    s.steps.reserve(784);
    for (double p : img.pixels) s.steps.push_back(Vector{p});
    return s;
}

SequenceSample to_row_sequence(const MnistImage& img) {
    SequenceSample s;
    s.target = img.label;
    s.steps.reserve(28);
    for (std::size_t r = 0; r < 28; ++r) {
        s.steps.emplace_back(img.pixels.begin() + r * 28, img.pixels.begin() + (r + 1) * 28);
    }
    return s;
}

std::vector<ReviewRecord> load_token_reviews(const std::string& path, std::size_t vocab,
                                             std::size_t maxlen, int pad_id) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("reviews: cannot open " + path);
    }
    std::vector<ReviewRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError("reviews: " + path + " line " + std::to_string(line_no) +
                            ": missing TAB separator");
        }
        ReviewRecord rec;
        if (line.substr(0, tab) == "0") {
            rec.label = 0;
        } else if (line.substr(0, tab) == "1") {
            rec.label = 1;
        } else {
            throw DataError("reviews: " + path + " line " + std::to_string(line_no) +
                            ": label must be 0 or 1");
        }

        std::vector<int> ids;
        const char* p = line.data() + tab + 1;
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            int value = 0;
            auto [next, ec] = std::from_chars(p, end, value);
            if (ec != std::errc() || value < 0) {
                throw DataError("reviews: " + path + " line " + std::to_string(line_no) +
                                ": malformed token id");
            }
            ids.push_back(static_cast<std::size_t>(value) >= vocab ? kReviewOovId : value);
            p = next;
        }

        // keep the last maxlen tokens, left-pad the rest
        rec.token_ids.assign(maxlen, pad_id);
        const std::size_t keep = ids.size() > maxlen ? maxlen : ids.size();
        for (std::size_t i = 0; i < keep; ++i) {
            rec.token_ids[maxlen - keep + i] = ids[ids.size() - keep + i];
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t count, std::size_t batch_size,
                                                 std::uint64_t seed) {
    if (count == 0) {
        throw std::invalid_argument("batch_iter: empty dataset");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("batch_iter: batch size must be >= 1");
    }
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t stop = std::min(count, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + stop);
    }
    return batches;
}

std::string task_name(Task t) {
    switch (t) {
        case Task::MnistPixel: return "mnist-pixel";
        case Task::MnistRow: return "mnist-row";
        case Task::Reviews: return "reviews";
    }
    return "?";
}

int Dataset::target(std::size_t i) const {
    return task == Task::Reviews ? reviews[i].label : images[i].label;
}

SequenceSample Dataset::sequence(std::size_t i) const {
    if (task == Task::MnistPixel) return to_pixel_sequence(images[i]);
    if (task == Task::MnistRow) return to_row_sequence(images[i]);
    throw std::logic_error("Dataset::sequence called on a token dataset");
}

void Dataset::truncate(std::size_t limit) {
    if (limit == 0) return;
    if (task == Task::Reviews) {
        if (reviews.size() > limit) reviews.resize(limit);
    } else if (images.size() > limit) {
        images.resize(limit);
    }
}

}  // namespace gruvar
