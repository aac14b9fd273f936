// genome.hpp
//
// Three-component world-model genome: visual (conv encoder + latent heads),
// memory (LSTM cell + optional MDN head) and controller (one linear layer).
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "nn.hpp"
#include "random.hpp"

namespace dip {

enum class Component : std::uint8_t { visual = 0, memory = 1, controller = 2 };

inline constexpr std::array<Component, 3> kComponents{Component::visual, Component::memory, Component::controller};

inline const char* to_string(Component c)
{
    switch (c) {
    case Component::visual:
        return "visual";
    case Component::memory:
        return "memory";
    case Component::controller:
        return "controller";
    }
    return "?";
}

inline Component component_from_string(const std::string& s)
{
    for (auto c : kComponents)
        if (s == to_string(c))
            return c;
    throw ConfigError("unknown component '" + s + "'");
}

struct ArchitectureConfig {
    std::size_t image_size = 16;
    std::size_t image_channels = 3;
    std::vector<std::size_t> channels{8, 16};
    std::size_t kernel = 4;
    std::size_t stride = 2;
    std::size_t z_dim = 8;
    std::size_t hidden_dim = 16;
    std::size_t n_mixtures = 5;
    std::size_t action_dim = 1;
    bool mdn_head_enabled = true;

    /// 64px, 32/64/128/256 channels, z=32, hidden=256, three actions.
    static ArchitectureConfig full_scale()
    {
        ArchitectureConfig a;
        a.image_size = 64;
        a.channels = {32, 64, 128, 256};
        a.z_dim = 32;
        a.hidden_dim = 256;
        a.action_dim = 3;
        return a;
    }

    static ArchitectureConfig desk_scale() { return ArchitectureConfig{}; }

    /// Spatial extent after the conv stack; 0 when the stack collapses.
    std::size_t final_extent() const
    {
        std::size_t e = image_size;
        for (std::size_t i = 0; i < channels.size(); ++i)
            e = nn::conv_output_extent(e, kernel, stride);
        return e;
    }

    std::size_t flat_features() const
    {
        const auto e = final_extent();
        return channels.back() * e * e;
    }

    void validate() const
    {
        if (image_size == 0 || image_channels == 0)
            throw ConfigError("image size and channels must be >= 1");
        if (channels.empty())
            throw ConfigError("encoder needs at least one conv layer");
        for (auto c : channels)
            if (c == 0)
                throw ConfigError("conv channel counts must be >= 1");
        if (kernel == 0 || stride == 0)
            throw ConfigError("kernel and stride must be >= 1");
        if (z_dim == 0 || hidden_dim == 0 || action_dim == 0)
            throw ConfigError("z-dim, hidden-dim and action-dim must be >= 1");
        if (mdn_head_enabled && n_mixtures == 0)
            throw ConfigError("n-mixtures must be >= 1 when the MDN head is enabled");
        if (final_extent() == 0)
            throw ConfigError("conv stack collapses below 1x1 for image size " + std::to_string(image_size));
    }

    bool operator==(const ArchitectureConfig&) const = default;
};

/// A layer and where its weights live inside a component segment.
struct LayerSlot {
    nn::LayerSpec spec;
    std::size_t offset = 0;
    std::size_t count = 0;
    std::size_t fan_in = 1;
};

/// Canonical layer order of one component.
inline std::vector<LayerSlot> component_layout(const ArchitectureConfig& arch, Component c)
{
    arch.validate();
    std::vector<LayerSlot> slots;
    std::size_t offset = 0;
    auto push = [&](nn::LayerSpec spec, std::size_t fan_in) {
        const auto n = nn::param_count(spec);
        slots.push_back({std::move(spec), offset, n, fan_in});
        offset += n;
    };
    switch (c) {
    case Component::visual: {
        std::size_t in_ch = arch.image_channels;
        for (std::size_t i = 0; i < arch.channels.size(); ++i) {
            push({"enc_conv" + std::to_string(i + 1), nn::LayerKind::conv, in_ch, arch.channels[i], arch.kernel,
                  arch.stride, nn::Activation::relu},
                 in_ch * arch.kernel * arch.kernel);
            in_ch = arch.channels[i];
        }
        const auto flat = arch.flat_features();
        push({"enc_mu", nn::LayerKind::linear, flat, arch.z_dim, 0, 0, nn::Activation::identity}, flat);
        push({"enc_logvar", nn::LayerKind::linear, flat, arch.z_dim, 0, 0, nn::Activation::identity}, flat);
        break;
    }
    case Component::memory:
        push({"lstm", nn::LayerKind::lstm_cell, arch.z_dim + arch.action_dim, arch.hidden_dim, 0, 0,
              nn::Activation::identity},
             arch.hidden_dim);
        if (arch.mdn_head_enabled)
            push({"mdn", nn::LayerKind::mdn_head, arch.hidden_dim, 3 * arch.n_mixtures * arch.z_dim, 0, 0,
                  nn::Activation::identity},
                 arch.hidden_dim);
        break;
    case Component::controller:
        push({"controller", nn::LayerKind::linear, arch.z_dim + arch.hidden_dim, arch.action_dim, 0, 0,
              nn::Activation::tanh},
             arch.z_dim + arch.hidden_dim);
        break;
    }
    return slots;
}

inline std::size_t count_params(const ArchitectureConfig& arch, Component c)
{
    std::size_t n = 0;
    for (const auto& s : component_layout(arch, c))
        n += s.count;
    return n;
}

/// Immutable genome. Segments are shared between a parent and its child
/// for every component the mutation left untouched.
class Genome {
public:
    Genome(ArchitectureConfig arch, std::vector<double> visual, std::vector<double> memory,
           std::vector<double> controller)
        : arch_(std::make_shared<const ArchitectureConfig>(std::move(arch)))
    {
        segments_[0] = std::make_shared<const std::vector<double>>(std::move(visual));
        segments_[1] = std::make_shared<const std::vector<double>>(std::move(memory));
        segments_[2] = std::make_shared<const std::vector<double>>(std::move(controller));
        for (auto c : kComponents) {
            const auto expected = count_params(*arch_, c);
            if (segment(c).size() != expected)
                throw ConfigError(std::string(to_string(c)) + " segment has " + std::to_string(segment(c).size()) +
                                  " parameters, architecture needs " + std::to_string(expected));
        }
    }

    const ArchitectureConfig& arch() const { return *arch_; }

    std::span<const double> segment(Component c) const { return *segments_[static_cast<std::size_t>(c)]; }

    /// Weights of one layer slot of a component.
    std::span<const double> weights(Component c, const LayerSlot& slot) const
    {
        return segment(c).subspan(slot.offset, slot.count);
    }

    Genome with_segment(Component c, std::vector<double> values) const
    {
        if (values.size() != segment(c).size())
            throw ConfigError("replacement segment length mismatch");
        Genome g = *this;
        g.segments_[static_cast<std::size_t>(c)] = std::make_shared<const std::vector<double>>(std::move(values));
        return g;
    }

    bool shares_segment(const Genome& other, Component c) const
    {
        return segments_[static_cast<std::size_t>(c)] == other.segments_[static_cast<std::size_t>(c)];
    }

    std::size_t total_params() const
    {
        return segment(Component::visual).size() + segment(Component::memory).size() +
               segment(Component::controller).size();
    }

    friend bool operator==(const Genome& a, const Genome& b)
    {
        if (!(a.arch() == b.arch()))
            return false;
        for (auto c : kComponents) {
            auto x = a.segment(c);
            auto y = b.segment(c);
            if (!std::equal(x.begin(), x.end(), y.begin(), y.end(), [](double p, double q) {
                    return std::bit_cast<std::uint64_t>(p) == std::bit_cast<std::uint64_t>(q);
                }))
                return false;
        }
        return true;
    }

private:
    std::shared_ptr<const ArchitectureConfig> arch_;
    std::array<std::shared_ptr<const std::vector<double>>, 3> segments_;
};

inline Genome init_genome(const ArchitectureConfig& arch, RandomSource& rng)
{
    std::array<std::vector<double>, 3> segs;
    for (auto c : kComponents) {
        auto& seg = segs[static_cast<std::size_t>(c)];
        for (const auto& slot : component_layout(arch, c)) {
            auto w = nn::he_uniform_init(slot.fan_in, slot.count, rng);
            seg.insert(seg.end(), w.begin(), w.end());
        }
    }
    return Genome(arch, std::move(segs[0]), std::move(segs[1]), std::move(segs[2]));
}

struct MutationEvent {
    Component component = Component::controller;
    double sigma = 0.03;
};

/// Picks one component uniformly and adds N(0, sigma^2) noise to every
/// parameter of it.
inline std::pair<Genome, MutationEvent> mutate(const Genome& g, double sigma, RandomSource& rng)
{
    if (!(sigma > 0.0))
        throw ConfigError("mutation sigma must be > 0");
    const auto c = static_cast<Component>(rng.uniform_int(0, 2));
    const auto src = g.segment(c);
    std::vector<double> next(src.begin(), src.end());
    for (auto& v : next)
        v += sigma * rng.normal();
    return {g.with_segment(c, std::move(next)), MutationEvent{c, sigma}};
}

inline double weight_distance(const Genome& a, const Genome& b, Component c)
{
    if (!(a.arch() == b.arch()))
        throw ConfigError("weight_distance: genomes have different architectures");
    const auto x = a.segment(c);
    const auto y = b.segment(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

// Genome file format, version 1 (see docs/formats.md).

inline constexpr std::uint32_t kGenomeFormatVersion = 1;

inline void write_arch(io::Writer& w, const ArchitectureConfig& a)
{
    w.u32(static_cast<std::uint32_t>(a.image_size));
    w.u32(static_cast<std::uint32_t>(a.image_channels));
    w.u32(static_cast<std::uint32_t>(a.channels.size()));
    for (auto c : a.channels)
        w.u32(static_cast<std::uint32_t>(c));
    w.u32(static_cast<std::uint32_t>(a.kernel));
    w.u32(static_cast<std::uint32_t>(a.stride));
    w.u32(static_cast<std::uint32_t>(a.z_dim));
    w.u32(static_cast<std::uint32_t>(a.hidden_dim));
    w.u32(static_cast<std::uint32_t>(a.n_mixtures));
    w.u32(static_cast<std::uint32_t>(a.action_dim));
    w.u8(a.mdn_head_enabled ? 1 : 0);
}

inline ArchitectureConfig read_arch(io::Reader& r)
{
    ArchitectureConfig a;
    a.image_size = r.u32();
    a.image_channels = r.u32();
    const auto n = r.u32();
    if (n > 64)
        r.fail("implausible conv layer count " + std::to_string(n));
    a.channels.resize(n);
    for (auto& c : a.channels)
        c = r.u32();
    a.kernel = r.u32();
    a.stride = r.u32();
    a.z_dim = r.u32();
    a.hidden_dim = r.u32();
    a.n_mixtures = r.u32();
    a.action_dim = r.u32();
    a.mdn_head_enabled = r.u8() != 0;
    return a;
}

inline io::Bytes serialize_genome(const Genome& g)
{
    io::Writer w;
    w.raw("DIPG");
    w.u32(kGenomeFormatVersion);
    write_arch(w, g.arch());
    for (auto c : kComponents) {
        const auto seg = g.segment(c);
        w.u8(static_cast<std::uint8_t>(c));
        w.u64(seg.size());
        io::Writer payload;
        payload.f64_array(seg);
        w.raw(payload.bytes());
        w.u64(io::fnv1a64(payload.bytes()));
    }
    w.u64(io::fnv1a64(w.bytes()));
    return w.take();
}

inline Genome deserialize_genome(std::span<const std::uint8_t> bytes)
{
    io::Reader r(bytes, "genome");
    r.expect_magic("DIPG");
    const auto version = r.u32();
    if (version != kGenomeFormatVersion)
        r.fail("unsupported layout version " + std::to_string(version));
    auto arch = read_arch(r);
    try {
        arch.validate();
    } catch (const ConfigError& e) {
        r.fail(std::string("invalid architecture descriptor: ") + e.what());
    }
    std::array<std::vector<double>, 3> segs;
    for (auto c : kComponents) {
        if (r.u8() != static_cast<std::uint8_t>(c))
            r.fail(std::string("segment order broken at ") + to_string(c));
        const auto n = r.u64();
        if (n != count_params(arch, c))
            r.fail(std::string(to_string(c)) + " segment length " + std::to_string(n) +
                   " does not match its descriptor");
        const auto start = r.offset();
        segs[static_cast<std::size_t>(c)] = r.f64_array(n);
        const auto sum = io::fnv1a64(bytes.subspan(start, r.offset() - start));
        if (r.u64() != sum)
            r.fail(std::string(to_string(c)) + " segment checksum mismatch");
    }
    const auto whole = io::fnv1a64(r.consumed());
    if (r.u64() != whole)
        r.fail("file checksum mismatch");
    if (r.remaining() != 0)
        r.fail("trailing bytes");
    return Genome(std::move(arch), std::move(segs[0]), std::move(segs[1]), std::move(segs[2]));
}

/// Loads a genome that must match `expected`; a different architecture is a
/// configuration error rather than a silent reinterpretation.
inline Genome deserialize_genome(std::span<const std::uint8_t> bytes, const ArchitectureConfig& expected)
{
    auto g = deserialize_genome(bytes);
    if (!(g.arch() == expected))
        throw ConfigError("genome architecture (z=" + std::to_string(g.arch().z_dim) + ", hidden=" +
                          std::to_string(g.arch().hidden_dim) + ") does not match the configured architecture (z=" +
                          std::to_string(expected.z_dim) + ", hidden=" + std::to_string(expected.hidden_dim) + ")");
    return g;
}

inline void save_genome(const std::filesystem::path& path, const Genome& g)
{
    io::write_file_atomic(path, serialize_genome(g));
}

inline Genome load_genome(const std::filesystem::path& path) { return deserialize_genome(io::read_file(path)); }

} // namespace dip
