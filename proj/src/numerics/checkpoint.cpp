#include "patchfill/numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace patchfill::numerics {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'M', 'N', 'D'};

template <typename U>
void append(std::vector<std::uint8_t>& out, U v) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    out.insert(out.end(), raw, raw + sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename U>
    U read() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::vector<std::uint8_t> read_bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

template <std::floating_point T>
std::vector<std::uint8_t> raw_bytes(const Tensor<T>& t) {
    std::vector<std::uint8_t> out(t.size() * sizeof(T));
    std::memcpy(out.data(), t.data(), out.size());
    return out;
}

template <std::floating_point S, std::floating_point T>
Tensor<T> decode(const std::vector<std::uint64_t>& dims, const std::vector<std::uint8_t>& bytes) {
    Shape shape(dims.begin(), dims.end());
    std::vector<S> src(bytes.size() / sizeof(S));
    std::memcpy(src.data(), bytes.data(), bytes.size());
    return Tensor<T>(shape, std::vector<T>(src.begin(), src.end()));
}

} // namespace

void Checkpoint::insert(Entry e) {
    for (auto& existing : entries_) {
        if (existing.name == e.name) {
            existing = std::move(e);
            return;
        }
    }
    entries_.push_back(std::move(e));
}

void Checkpoint::put(const std::string& name, const Tensor<float>& t) {
    insert(Entry{name, {t.shape().begin(), t.shape().end()}, 4, raw_bytes(t)});
}

void Checkpoint::put(const std::string& name, const Tensor<double>& t) {
    insert(Entry{name, {t.shape().begin(), t.shape().end()}, 8, raw_bytes(t)});
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
    insert(Entry{name, {text.size()}, 1, std::vector<std::uint8_t>(text.begin(), text.end())});
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw LookupError("checkpoint has no field '" + name + "'");
}

template <std::floating_point T>
Tensor<T> Checkpoint::get(const std::string& name) const {
    const Entry& e = find(name);
    switch (e.code) {
    case 4:
        return decode<float, T>(e.dims, e.bytes);
    case 8:
        return decode<double, T>(e.dims, e.bytes);
    default:
        throw LookupError("checkpoint field '" + name + "' is not a floating-point tensor");
    }
}

std::string Checkpoint::text(const std::string& name) const {
    const Entry& e = find(name);
    if (e.code != 1) throw LookupError("checkpoint field '" + name + "' is not text");
    return std::string(e.bytes.begin(), e.bytes.end());
}

double Checkpoint::scalar(const std::string& name) const {
    Tensor<double> t = get<double>(name);
    if (t.size() != 1) throw LookupError("checkpoint field '" + name + "' is not a scalar");
    return t[0];
}

template <std::floating_point T>
void Checkpoint::load_into(ParameterStore<T>& store) const {
    for (Parameter<T>* p : store.all()) {
        Tensor<T> t = get<T>(p->name);
        if (t.shape() != p->value.shape()) {
            throw LookupError("checkpoint field '" + p->name + "' has shape " + shape_string(t.shape()) +
                              ", expected " + shape_string(p->value.shape()));
        }
        p->value = std::move(t);
    }
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    append<std::uint32_t>(out, kVersion);
    append<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        append<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        append<std::uint32_t>(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) append<std::uint64_t>(out, d);
        append<std::uint8_t>(out, e.code);
        out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    auto magic = in.read_bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint file (bad magic)");
    const auto version = in.read<std::uint32_t>();
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = in.read<std::uint32_t>();
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = in.read<std::uint32_t>();
        auto name = in.read_bytes(name_len);
        e.name.assign(name.begin(), name.end());
        const auto rank = in.read<std::uint32_t>();
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            e.dims.push_back(in.read<std::uint64_t>());
            n *= e.dims.back();
        }
        e.code = in.read<std::uint8_t>();
        if (e.code != 1 && e.code != 4 && e.code != 8) {
            throw FormatError("checkpoint field '" + e.name + "' has unknown element code");
        }
        if (e.code != 1 && n == 0) throw FormatError("checkpoint field '" + e.name + "' is empty");
        e.bytes = in.read_bytes(static_cast<std::size_t>(n * e.code));
        ckpt.insert(std::move(e));
    }
    if (!in.done()) throw FormatError("trailing bytes after checkpoint");
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;
template void Checkpoint::load_into<float>(ParameterStore<float>&) const;
template void Checkpoint::load_into<double>(ParameterStore<double>&) const;

} // namespace patchfill::numerics
