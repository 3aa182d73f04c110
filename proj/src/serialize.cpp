#include "gruvar/serialize.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace gruvar {

namespace {

constexpr char kMagic[4] = {'G', 'V', 'A', 'R'};

void put_u8(std::ostream& out, std::uint8_t v) {
    out.put(static_cast<char>(v));
}

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::ostream& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    std::uint8_t u8() {
        int c = in_.get();
        if (c == EOF) fail();
        return static_cast<std::uint8_t>(c);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t len) {
        std::string s(len, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(len));
        if (static_cast<std::size_t>(in_.gcount()) != len) fail();
        return s;
    }

    [[noreturn]] void fail() const {
        throw ModelIoError("model file " + path_ + " is truncated or corrupt");
    }

private:
    std::istream& in_;
    std::string path_;
};

std::uint8_t variant_tag(GateVariant v) { return static_cast<std::uint8_t>(v); }

GateVariant variant_from_tag(std::uint8_t t, const std::string& path) {
    if (t > 3) throw ModelIoError("model file " + path + ": unknown gate variant tag");
    return static_cast<GateVariant>(t);
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelIoError("cannot write model file " + path);
    out.write(kMagic, 4);
    put_u8(out, static_cast<std::uint8_t>(kModelFormatVersion));
    put_u8(out, static_cast<std::uint8_t>(cell_kind_of(m.cell)));
    GateVariant variant = GateVariant::Full;
    if (const auto* gru = std::get_if<GruParams>(&m.cell)) variant = gru->variant;
    put_u8(out, variant_tag(variant));
    put_u8(out, static_cast<std::uint8_t>(m.activation));
    put_u8(out, static_cast<std::uint8_t>(m.loss_kind));
    const CellDims dims = cell_dims(m.cell);
    put_u32(out, static_cast<std::uint32_t>(dims.hidden));
    put_u32(out, static_cast<std::uint32_t>(dims.input));
    put_u32(out, static_cast<std::uint32_t>(m.head.w_out.rows));
    put_u8(out, m.embedding ? 1 : 0);
    if (m.embedding) {
        put_u32(out, static_cast<std::uint32_t>(m.embedding->vocab));
        put_u32(out, static_cast<std::uint32_t>(m.embedding->dim));
    }
    const auto refs = model_tensor_refs(m);
    put_u32(out, static_cast<std::uint32_t>(refs.size()));
    for (const auto& r : refs) {
        put_u8(out, static_cast<std::uint8_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put_u64(out, r.size);
        for (std::size_t i = 0; i < r.size; ++i) put_f64(out, r.data[i]);
    }
    if (!out) throw ModelIoError("failed writing model file " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelIoError("cannot open model file " + path);
    Reader r(in, path);

    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw ModelIoError("model file " + path + " has the wrong magic bytes");
    }
    const std::uint8_t version = r.u8();
    if (version != kModelFormatVersion) {
        throw ModelIoError("model file " + path + " has unsupported format version " +
                           std::to_string(int(version)));
    }
    const auto kind = static_cast<CellKind>(r.u8());
    const GateVariant variant = variant_from_tag(r.u8(), path);
    const auto activation = static_cast<Activation>(r.u8());
    const auto loss = static_cast<LossKind>(r.u8());
    const std::size_t hidden = r.u32();
    const std::size_t input = r.u32();
    const std::size_t head_width = r.u32();
    const bool has_embedding = r.u8() != 0;

    Model m;
    m.activation = activation;
    m.loss_kind = loss;
    if (has_embedding) {
        const std::size_t vocab = r.u32();
        const std::size_t dim = r.u32();
        m.embedding = make_embedding(vocab, dim);
    }
    m.cell = make_cell_params(kind, variant, CellDims{hidden, input});
    m.head.w_out = Matrix(head_width, hidden);
    m.head.b_out = Vector(head_width, 0.0);

    const auto refs = model_tensor_refs(m);
    const std::uint32_t count = r.u32();
    if (count != refs.size()) {
        throw ModelIoError("model file " + path + ": expected " + std::to_string(refs.size()) +
                           " tensors, found " + std::to_string(count));
    }
    for (const auto& ref : refs) {
        const std::size_t name_len = r.u8();
        const std::string name = r.str(name_len);
        if (name != ref.name) {
            throw ModelIoError("model file " + path + ": tensor '" + name + "' where '" +
                               ref.name + "' was expected");
        }
        const std::uint64_t len = r.u64();
        if (len != ref.size) {
            throw ModelIoError("model file " + path + ": tensor '" + name + "' has " +
                               std::to_string(len) + " entries, expected " +
                               std::to_string(ref.size));
        }
        for (std::size_t i = 0; i < ref.size; ++i) {
            ref.data[i] = r.f64();
        }
    }
    return m;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_csv_header() { return "epoch,split,loss,accuracy,lr,wall_seconds"; }

std::string metrics_csv_row(const MetricsRecord& rec) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", rec.wall_seconds);
    return std::to_string(rec.epoch) + "," + split_name(rec.split) + "," +
           format_double(rec.loss) + "," + format_double(rec.accuracy) + "," +
           format_double(rec.lr) + "," + wall;
}

std::string format_manifest(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string out;
    for (const auto& [key, value] : entries) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    }
    return out;
}

}  // namespace gruvar
