#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <type_traits>

#include "astsed/tensor/autodiff.hpp"

namespace astsed {

/// Named parameter leaves with one gradient slot per leaf. Gradient slots
/// are absent until something accumulates into them.
template <typename T = double>
class ParamTree {
 public:
    using Leaves = std::map<std::string, NdArray<T>>;

    void add(const std::string& path, NdArray<T> value) {
        if (!leaves_.emplace(path, std::move(value)).second) {
            throw StructuralError("duplicate parameter path '" + path + "'");
        }
    }

    bool contains(const std::string& path) const { return leaves_.count(path) != 0; }

    const NdArray<T>& at(const std::string& path) const {
        auto it = leaves_.find(path);
        if (it == leaves_.end()) throw StructuralError("no parameter '" + path + "'");
        return it->second;
    }

    NdArray<T>& at(const std::string& path) {
        auto it = leaves_.find(path);
        if (it == leaves_.end()) throw StructuralError("no parameter '" + path + "'");
        return it->second;
    }

    const Leaves& leaves() const noexcept { return leaves_; }
    Leaves& leaves() noexcept { return leaves_; }
    std::size_t size() const noexcept { return leaves_.size(); }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& [_, v] : leaves_) n += v.size();
        return n;
    }

    void accumulate_grad(const std::string& path, const NdArray<T>& g) {
        const auto& leaf = at(path);
        if (g.shape() != leaf.shape()) {
            throw DimensionError("gradient for '" + path + "' has shape " + shape_str(g.shape()) +
                                 ", leaf has " + shape_str(leaf.shape()));
        }
        auto [it, inserted] = grads_.try_emplace(path, g);
        if (!inserted)
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }

    const NdArray<T>* grad(const std::string& path) const {
        auto it = grads_.find(path);
        return it == grads_.end() ? nullptr : &it->second;
    }

    const Leaves& grads() const noexcept { return grads_; }
    bool has_gradients() const noexcept { return !grads_.empty(); }
    void clear_grads() { grads_.clear(); }

    /// Throws StructuralError naming the first path where the trees differ.
    void require_same_structure(const ParamTree& other) const {
        auto a = leaves_.begin();
        auto b = other.leaves_.begin();
        for (; a != leaves_.end() && b != other.leaves_.end(); ++a, ++b) {
            if (a->first != b->first) {
                throw StructuralError("parameter trees diverge at '" + std::min(a->first, b->first) + "'");
            }
            if (a->second.shape() != b->second.shape()) {
                throw StructuralError("parameter '" + a->first + "' has shape " +
                                      shape_str(a->second.shape()) + " vs " +
                                      shape_str(b->second.shape()));
            }
        }
        if (a != leaves_.end()) throw StructuralError("parameter trees diverge at '" + a->first + "'");
        if (b != other.leaves_.end()) throw StructuralError("parameter trees diverge at '" + b->first + "'");
    }

    friend bool operator==(const ParamTree& a, const ParamTree& b) { return a.leaves_ == b.leaves_; }

 private:
    Leaves leaves_;
    Leaves grads_;
};

/// Graph leaves bound to a ParamTree for one forward pass.
template <typename T = double>
class ParamBinding {
 public:
    ParamBinding() = default;

    ParamBinding(const ParamTree<T>& tree, bool trainable) {
        for (const auto& [path, value] : tree.leaves()) {
            vars_.emplace(path, trainable ? Var<T>::parameter(value) : Var<T>::constant(value));
        }
    }

    const Var<T>& operator()(const std::string& path) const {
        auto it = vars_.find(path);
        if (it == vars_.end()) throw StructuralError("no parameter '" + path + "' bound");
        return it->second;
    }

    const std::map<std::string, Var<T>>& vars() const noexcept { return vars_; }

    /// Moves accumulated leaf gradients into `tree`'s gradient slots.
    void collect_grads(ParamTree<T>& tree) const {
        for (const auto& [path, var] : vars_) {
            if (var.requires_grad() && !var.grad().empty()) tree.accumulate_grad(path, var.grad());
        }
    }

 private:
    std::map<std::string, Var<T>> vars_;
};

// ---------------------------------------------------------------------------
// Binary container:
//   "ASTSEDPT" | u32 version | u64 leaf count |
//   per leaf: u32 path length | path | u8 dtype (1 = f32, 2 = f64) |
//             u32 rank | u64 dims[rank] | little-endian payload

namespace serial {

inline constexpr char kParamMagic[8] = {'A', 'S', 'T', 'S', 'E', 'D', 'P', 'T'};
inline constexpr std::uint32_t kParamVersion = 1;

template <typename U>
void write_le(std::ostream& os, U v) {
    static_assert(std::is_unsigned_v<U>);
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char bytes[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("truncated parameter container");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else return 2;
}

}  // namespace serial

template <typename T>
void save_params(std::ostream& os, const ParamTree<T>& tree) {
    using namespace serial;
    os.write(kParamMagic, sizeof(kParamMagic));
    write_le<std::uint32_t>(os, kParamVersion);
    write_le<std::uint64_t>(os, tree.size());
    for (const auto& [path, value] : tree.leaves()) {
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(path.size()));
        os.write(path.data(), static_cast<std::streamsize>(path.size()));
        write_le<std::uint8_t>(os, dtype_tag<T>());
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(value.rank()));
        for (std::size_t d : value.shape()) write_le<std::uint64_t>(os, d);
        for (T v : value.values()) {
            if constexpr (std::is_same_v<T, float>) write_le(os, std::bit_cast<std::uint32_t>(v));
            else write_le(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
        }
    }
    if (!os) throw IoError("failed writing parameter container");
}

template <typename T>
ParamTree<T> load_params(std::istream& is) {
    using namespace serial;
    char magic[sizeof(kParamMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0) {
        throw IoError("not a parameter container (bad magic)");
    }
    const auto version = read_le<std::uint32_t>(is);
    if (version != kParamVersion) {
        throw IoError("unsupported parameter container version " + std::to_string(version));
    }
    const auto count = read_le<std::uint64_t>(is);
    ParamTree<T> tree;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = read_le<std::uint32_t>(is);
        std::string path(len, '\0');
        if (!is.read(path.data(), len)) throw IoError("truncated parameter path");
        const auto tag = read_le<std::uint8_t>(is);
        if (tag != 1 && tag != 2) throw IoError("unknown dtype tag for '" + path + "'");
        const auto rank = read_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(read_le<std::uint64_t>(is));
        std::vector<T> data(shape_size(shape));
        for (auto& v : data) {
            if (tag == 1) v = static_cast<T>(std::bit_cast<float>(read_le<std::uint32_t>(is)));
            else v = static_cast<T>(std::bit_cast<double>(read_le<std::uint64_t>(is)));
        }
        tree.add(path, NdArray<T>(std::move(shape), std::move(data)));
    }
    return tree;
}

}  // namespace astsed
