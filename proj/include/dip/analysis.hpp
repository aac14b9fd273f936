// analysis.hpp
//
// Interpretability tools for evolved agents: perturbation saliency, LSTM
// activation variance, weight-distance trajectories, reward-per-age tables
// and per-step latent/hidden vector dumps.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "agent.hpp"
#include "envs.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "harness.hpp"

namespace dip::analysis {

struct SaliencyMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

struct SaliencyOptions {
    std::size_t blur_size = 5;
    double blur_sigma = 5.0 / 3.0;
    std::size_t stride = 1;
};

/// Per-channel Gaussian blur with a size x size kernel; the kernel is
/// renormalized over in-bounds pixels at the borders. Accumulates offsets
/// from the center pixel so flat regions come back bit-identical.
inline Image gaussian_blur(const Image& img, std::size_t size, double sigma)
{
    if (size == 0 || size % 2 == 0)
        throw ConfigError("blur size must be odd and >= 1");
    if (!(sigma > 0.0))
        throw ConfigError("blur sigma must be > 0");
    const auto r = static_cast<std::int64_t>(size / 2);
    std::vector<double> k(size);
    for (std::int64_t d = -r; d <= r; ++d)
        k[static_cast<std::size_t>(d + r)] = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
    Image out(img.channels, img.height, img.width);
    const auto h = static_cast<std::int64_t>(img.height);
    const auto w = static_cast<std::int64_t>(img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double center = img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                double acc = 0.0;
                double norm = 0.0;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx) {
                        const auto yy = y + dy;
                        const auto xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= h || xx >= w)
                            continue;
                        const double kw = k[static_cast<std::size_t>(dy + r)] * k[static_cast<std::size_t>(dx + r)];
                        acc += kw * (img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) - center);
                        norm += kw;
                    }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = center + acc / norm;
            }
    return out;
}

/// `img` with the size x size patch centered at (y, x) taken from `blurred`.
inline Image blur_patch(const Image& img, const Image& blurred, std::size_t y, std::size_t x, std::size_t size)
{
    Image out = img;
    const auto r = static_cast<std::int64_t>(size / 2);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::int64_t dy = -r; dy <= r; ++dy)
            for (std::int64_t dx = -r; dx <= r; ++dx) {
                const auto yy = static_cast<std::int64_t>(y) + dy;
                const auto xx = static_cast<std::int64_t>(x) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<std::int64_t>(img.height) ||
                    xx >= static_cast<std::int64_t>(img.width))
                    continue;
                out.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) =
                    blurred.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
    return out;
}

inline double l1_distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(a[i] - b[i]);
    return s;
}

/// S(i,j) = |pi(I) - pi(I')|_1 where I' blurs the patch at (i,j). Both
/// passes start from the same incoming recurrent state. With stride > 1
/// each computed value fills its stride x stride block.
inline SaliencyMap saliency_map(const Agent& agent, const Image& obs, const AgentState& state,
                                const SaliencyOptions& opt = {})
{
    if (opt.blur_size > obs.height || opt.blur_size > obs.width)
        throw ConfigError("blur patch " + std::to_string(opt.blur_size) + " larger than image " + obs.shape().str());
    if (opt.stride == 0)
        throw ConfigError("saliency stride must be >= 1");
    const auto base = agent.step(state, obs).first;
    const Image blurred = gaussian_blur(obs, opt.blur_size, opt.blur_sigma);
    SaliencyMap map{obs.height, obs.width, std::vector<double>(obs.height * obs.width, 0.0)};
    for (std::size_t y = 0; y < obs.height; y += opt.stride)
        for (std::size_t x = 0; x < obs.width; x += opt.stride) {
            const auto perturbed = agent.step(state, blur_patch(obs, blurred, y, x, opt.blur_size)).first;
            const double s = l1_distance(base, perturbed);
            for (std::size_t yy = y; yy < std::min(obs.height, y + opt.stride); ++yy)
                for (std::size_t xx = x; xx < std::min(obs.width, x + opt.stride); ++xx)
                    map.values[yy * obs.width + xx] = s;
        }
    return map;
}

inline SaliencyMap saliency_map(const Genome& genome, const Image& obs, const AgentState& state,
                                const SaliencyOptions& opt = {})
{
    return saliency_map(Agent(genome), obs, state, opt);
}

struct ActivationTrace {
    std::vector<double> step_mean;   // mean over hidden units per step
    double episode_mean = 0.0;       // mean of step_mean
    std::vector<double> raw;         // (episode_mean - step_mean)^2
    std::vector<double> normalized;  // raw min-max scaled to [0,1]
};

/// Deviation of the per-step mean hidden activation from its episode mean,
/// min-max normalized; a constant raw sequence normalizes to zeros.
inline ActivationTrace activation_variance(const std::vector<std::vector<double>>& hidden)
{
    if (hidden.empty())
        throw ConfigError("activation_variance needs at least one step");
    ActivationTrace t;
    for (const auto& h : hidden) {
        if (h.empty())
            throw ConfigError("activation_variance: empty hidden vector");
        t.step_mean.push_back(std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size()));
    }
    t.episode_mean =
        std::accumulate(t.step_mean.begin(), t.step_mean.end(), 0.0) / static_cast<double>(t.step_mean.size());
    for (double m : t.step_mean)
        t.raw.push_back((t.episode_mean - m) * (t.episode_mean - m));
    const auto [lo, hi] = std::minmax_element(t.raw.begin(), t.raw.end());
    const double span = *hi - *lo;
    for (double v : t.raw)
        t.normalized.push_back(span > 0.0 ? (v - *lo) / span : 0.0);
    return t;
}

struct DistanceRow {
    std::uint64_t generation = 0;
    std::uint64_t id = 0;
    double reward = 0.0;
    std::uint64_t age = 0;
    double population_mean_age = 0.0;
    std::array<double, 3> distance{};
};

inline std::vector<DistanceRow> distance_trajectory(const std::vector<ArchiveEntry>& archive, const Genome& final_genome)
{
    if (archive.empty())
        throw ConfigError("distance_trajectory needs a nonempty archive");
    std::vector<DistanceRow> rows;
    for (const auto& e : archive) {
        DistanceRow r{e.generation, e.id, e.reward, e.age, e.population_mean_age, {}};
        for (auto c : kComponents)
            r.distance[static_cast<std::size_t>(c)] = weight_distance(e.genome, final_genome, c);
        rows.push_back(r);
    }
    return rows;
}

struct AgeRow {
    std::uint64_t age = 0;
    double mean_reward = 0.0;
    std::size_t count = 0;
};

/// Pools every (age, reward) pair over all generations of all runs and
/// groups by age.
inline std::vector<AgeRow> reward_age_stats(const std::vector<std::vector<GenerationRecord>>& runs)
{
    std::map<std::uint64_t, std::pair<double, std::size_t>> acc;
    for (const auto& run : runs)
        for (const auto& rec : run)
            for (const auto& m : rec.members) {
                auto& [sum, n] = acc[m.age];
                sum += m.reward;
                ++n;
            }
    std::vector<AgeRow> out;
    for (const auto& [age, v] : acc)
        out.push_back({age, v.first / static_cast<double>(v.second), v.second});
    return out;
}

/// Average ranks (1-based), ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
            ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation; NaN when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("spearman needs two equal-length samples of size >= 2");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

struct VectorRecord {
    std::size_t t = 0;
    std::vector<double> z;
    std::vector<double> h;
    std::vector<double> action;
    double reward = 0.0;
    bool operator==(const VectorRecord&) const = default;
};

struct VectorDump {
    ArchitectureConfig arch;
    std::string genome_id;
    std::uint64_t episode_seed = 0;
    std::vector<VectorRecord> records;
};

/// One rollout with every step's latent, hidden state, action and reward.
inline VectorDump dump_vectors(const Genome& genome, const envs::EnvConfig& env, std::uint64_t seed,
                               std::string genome_id = {})
{
    VectorDump d{genome.arch(), std::move(genome_id), seed, {}};
    run_episode(Agent(genome), env, seed, [&](const StepRecord& r) {
        d.records.push_back({r.t, r.z, r.h, r.action, r.reward});
    });
    return d;
}

/// Per-step hidden vectors of one rollout.
inline std::vector<std::vector<double>> hidden_trace(const Genome& genome, const envs::EnvConfig& env,
                                                     std::uint64_t seed)
{
    std::vector<std::vector<double>> hs;
    run_episode(Agent(genome), env, seed, [&](const StepRecord& r) { hs.push_back(r.h); });
    return hs;
}

// Text writers (schemas in docs/formats.md).

inline void write_vector_dump(std::ostream& os, const VectorDump& d)
{
    os << "# dip-vectors v1\n";
    os << "# genome=" << (d.genome_id.empty() ? "-" : d.genome_id) << " seed=" << d.episode_seed
       << " z_dim=" << d.arch.z_dim << " hidden_dim=" << d.arch.hidden_dim << " action_dim=" << d.arch.action_dim
       << "\n";
    os << "t\treward";
    for (std::size_t i = 0; i < d.arch.z_dim; ++i)
        os << "\tz" << i;
    for (std::size_t i = 0; i < d.arch.hidden_dim; ++i)
        os << "\th" << i;
    for (std::size_t i = 0; i < d.arch.action_dim; ++i)
        os << "\ta" << i;
    os << "\n";
    os << std::setprecision(17);
    for (const auto& r : d.records) {
        os << r.t << '\t' << r.reward;
        for (double v : r.z)
            os << '\t' << v;
        for (double v : r.h)
            os << '\t' << v;
        for (double v : r.action)
            os << '\t' << v;
        os << '\n';
    }
}

inline void write_saliency_grid(std::ostream& os, const SaliencyMap& m)
{
    os << "# dip-saliency v1 height=" << m.height << " width=" << m.width << "\n";
    os << std::setprecision(17);
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x)
            os << (x ? "\t" : "") << m.at(y, x);
        os << '\n';
    }
}

/// Binary PPM of the observation with saliency blended in as a red overlay.
inline void write_saliency_overlay(const std::filesystem::path& path, const Image& obs, const SaliencyMap& m)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    const double peak = m.values.empty() ? 0.0 : *std::max_element(m.values.begin(), m.values.end());
    out << "P6\n" << obs.width << ' ' << obs.height << "\n255\n";
    for (std::size_t y = 0; y < obs.height; ++y)
        for (std::size_t x = 0; x < obs.width; ++x) {
            const double s = peak > 0.0 ? m.at(y, x) / peak : 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = obs.channels == 3 ? obs.at(c, y, x) : obs.at(0, y, x);
                const double v = c == 0 ? (1.0 - s) * base + s : (1.0 - s) * base;
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
            }
        }
}

inline void write_activation_trace(std::ostream& os, const ActivationTrace& t)
{
    os << "# dip-activation v1 episode_mean=" << std::setprecision(17) << t.episode_mean << "\n";
    os << "t\tstep_mean\traw\tnormalized\n";
    for (std::size_t i = 0; i < t.step_mean.size(); ++i)
        os << i << '\t' << t.step_mean[i] << '\t' << t.raw[i] << '\t' << t.normalized[i] << '\n';
}

inline void write_distance_table(std::ostream& os, const std::vector<DistanceRow>& rows)
{
    os << "# dip-distances v1\n";
    os << "generation\tid\treward\tage\tpopulation_mean_age\tvisual\tmemory\tcontroller\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.generation << '\t' << r.id << '\t' << r.reward << '\t' << r.age << '\t' << r.population_mean_age
           << '\t' << r.distance[0] << '\t' << r.distance[1] << '\t' << r.distance[2] << '\n';
}

inline void write_age_table(std::ostream& os, const std::vector<AgeRow>& rows)
{
    os << "# dip-reward-age v1\n";
    os << "age\tmean_reward\tcount\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.age << '\t' << r.mean_reward << '\t' << r.count << '\n';
}

} // namespace dip::analysis
