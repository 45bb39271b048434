#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "patchfill/numerics/parameter.hpp"
#include "patchfill/numerics/tensor.hpp"

namespace patchfill::numerics {

/// Named-tensor container backing every on-disk artifact.
///
/// File layout, all integers little-endian:
///   "PMND" | u32 version | u32 tensor count
///   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank]
///               | u8 element code (1 = byte, 4 = f32, 8 = f64) | raw elements
///
/// Entries keep insertion order, so saving the same content twice yields the
/// same bytes. Text metadata is stored as byte tensors.
class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string& name, const Tensor<float>& t);
    void put(const std::string& name, const Tensor<double>& t);
    void put_text(const std::string& name, const std::string& text);
    void put_scalar(const std::string& name, double v) { put(name, Tensor<double>::scalar(v)); }

    template <std::floating_point T>
    void put_parameters(const ParameterStore<T>& store) {
        for (const Parameter<T>* p : store.all()) put(p->name, p->value);
    }

    bool contains(const std::string& name) const;

    /// Converts from the stored precision. Throws LookupError naming the entry.
    template <std::floating_point T>
    Tensor<T> get(const std::string& name) const;

    std::string text(const std::string& name) const;
    double scalar(const std::string& name) const;

    /// Copies every parameter's value from the entry of the same name,
    /// checking shapes. Throws LookupError naming the offending field.
    template <std::floating_point T>
    void load_into(ParameterStore<T>& store) const;

    std::vector<std::string> names() const;

    /// Written to a temporary sibling then renamed into place.
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

private:
    struct Entry {
        std::string name;
        std::vector<std::uint64_t> dims;
        std::uint8_t code = 0;
        std::vector<std::uint8_t> bytes;
    };

    const Entry& find(const std::string& name) const;
    void insert(Entry e);

    std::vector<Entry> entries_;
};

} // namespace patchfill::numerics
