// envs.hpp
//
// Built-in pixel environments behind one episode interface.
//
// DodgeWorld: the agent stands on the bottom row of a walled grid and strafes
// left or right to avoid projectiles that fall one row per frame. Most
// projectiles are aimed at (jittered) agent column at spawn time and drift
// toward it while falling. +1 reward per surviving frame.
//
// TrackWorld: a point car drives over a procedurally generated chain of
// tiles on a coarse grid. -0.1 reward per frame, +100/N for the first visit
// of each of the N tiles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace dip::envs {

enum class EnvKind { dodge, track };

inline const char* to_string(EnvKind k) { return k == EnvKind::dodge ? "dodge" : "track"; }

inline EnvKind env_kind_from_string(const std::string& s)
{
    if (s == "dodge")
        return EnvKind::dodge;
    if (s == "track")
        return EnvKind::track;
    throw ConfigError("unknown environment kind '" + s + "'");
}

struct DodgeParams {
    std::size_t grid = 16;        // cells per side, walls included
    double spawn_rate = 0.15;     // spawn probability per frame
    double homing_prob = 0.75;    // fraction of projectiles aimed at the agent
    std::int64_t aim_jitter = 1;  // aimed column = agent column +- jitter
    double action_threshold = 0.3;
};

struct TrackParams {
    std::size_t grid = 8;
    std::size_t n_tiles = 12;
    double steer_rate = 0.3;  // radians per frame at full lock
    double accel = 0.05;
    double brake = 0.1;
    double drag = 0.02;
    double max_speed = 0.5;  // cells per frame
    double frame_penalty = 0.1;
    double tile_reward_total = 100.0;
};

struct EnvConfig {
    EnvKind kind = EnvKind::dodge;
    std::size_t image_size = 16;
    std::size_t max_steps = 300;
    DodgeParams dodge;
    TrackParams track;
    std::size_t solved_rollouts = 20;
    /// Mean-score bar for solved_check; negative means the default rule.
    double solved_threshold = -1.0;

    /// 64px DodgeWorld with 2,100-step episodes judged over 100 rollouts.
    static EnvConfig full_scale_dodge()
    {
        EnvConfig c;
        c.image_size = 64;
        c.max_steps = 2100;
        c.solved_rollouts = 100;
        return c;
    }

    static EnvConfig desk_scale_track()
    {
        EnvConfig c;
        c.kind = EnvKind::track;
        c.max_steps = 300;
        return c;
    }

    std::size_t grid() const { return kind == EnvKind::dodge ? dodge.grid : track.grid; }

    /// Survival of 750 frames out of 2,100, scaled to max_steps, for
    /// DodgeWorld; 90% of the tile reward for TrackWorld.
    double effective_solved_threshold() const
    {
        if (solved_threshold >= 0.0)
            return solved_threshold;
        if (kind == EnvKind::dodge)
            return 750.0 * static_cast<double>(max_steps) / 2100.0;
        return 0.9 * track.tile_reward_total;
    }

    double min_reward() const
    {
        return kind == EnvKind::dodge ? 0.0 : -track.frame_penalty * static_cast<double>(max_steps);
    }

    void validate() const
    {
        if (max_steps == 0)
            throw ConfigError("max-steps must be >= 1");
        if (image_size == 0 || grid() == 0 || image_size % grid() != 0)
            throw ConfigError("image size " + std::to_string(image_size) + " must be a positive multiple of grid " +
                              std::to_string(grid()));
        if (solved_rollouts == 0)
            throw ConfigError("solved-rollouts must be >= 1");
        if (kind == EnvKind::dodge) {
            if (dodge.grid < 3)
                throw ConfigError("dodge grid must be >= 3");
            if (dodge.spawn_rate < 0.0 || dodge.spawn_rate > 1.0 || dodge.homing_prob < 0.0 ||
                dodge.homing_prob > 1.0)
                throw ConfigError("dodge probabilities must lie in [0,1]");
        } else {
            if (track.n_tiles < 2 || track.n_tiles > track.grid * track.grid)
                throw ConfigError("track tile count must be in [2, grid^2]");
        }
    }
};

struct Projectile {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t target_x = 0;
    bool operator==(const Projectile&) const = default;
};

struct DodgeState {
    EnvConfig cfg;
    RandomSource rng{0};
    std::int64_t agent_x = 0;
    std::vector<Projectile> projectiles;
    std::size_t t = 0;
    std::size_t steps_survived = 0;
    double total_reward = 0.0;
    bool done = false;
};

struct TrackState {
    EnvConfig cfg;
    std::vector<std::pair<std::int64_t, std::int64_t>> tiles;  // (x, y) in visiting order
    std::vector<std::int64_t> tile_at;                         // grid cell -> tile index or -1
    std::vector<bool> visited;
    std::size_t n_visited = 0;
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double speed = 0.0;
    std::size_t t = 0;
    double total_reward = 0.0;
    bool done = false;
};

using EnvState = std::variant<DodgeState, TrackState>;

struct EpisodeResult {
    double total_reward = 0.0;
    std::size_t steps_survived = 0;
    bool terminated_early = false;
};

struct StepOutcome {
    Image observation;
    double reward = 0.0;
    bool done = false;
};

namespace colors {
inline constexpr double background[3] = {0.15, 0.15, 0.20};
inline constexpr double wall[3] = {0.50, 0.50, 0.50};
inline constexpr double agent[3] = {0.20, 0.90, 0.20};
inline constexpr double projectile[3] = {1.00, 0.40, 0.10};
inline constexpr double grass[3] = {0.30, 0.70, 0.30};
inline constexpr double road[3] = {0.45, 0.45, 0.45};
inline constexpr double car[3] = {0.90, 0.10, 0.10};
} // namespace colors

namespace detail {

inline void fill_cell(Image& img, std::size_t cell_px, std::size_t cx, std::size_t cy, const double (&rgb)[3])
{
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = cy * cell_px; y < (cy + 1) * cell_px; ++y)
            for (std::size_t x = cx * cell_px; x < (cx + 1) * cell_px; ++x)
                img.at(c, y, x) = rgb[c];
}

inline std::vector<std::pair<std::int64_t, std::int64_t>> generate_track(const TrackParams& p, RandomSource& rng)
{
    const auto g = static_cast<std::int64_t>(p.grid);
    constexpr std::int64_t dx[4] = {1, 0, -1, 0};
    constexpr std::int64_t dy[4] = {0, 1, 0, -1};
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<bool> used(p.grid * p.grid, false);
        std::vector<std::pair<std::int64_t, std::int64_t>> tiles;
        std::int64_t x = rng.uniform_int(0, g - 1);
        std::int64_t y = rng.uniform_int(0, g - 1);
        tiles.emplace_back(x, y);
        used[static_cast<std::size_t>(y * g + x)] = true;
        while (tiles.size() < p.n_tiles) {
            std::vector<int> options;
            for (int d = 0; d < 4; ++d) {
                const auto nx = x + dx[d];
                const auto ny = y + dy[d];
                if (nx >= 0 && ny >= 0 && nx < g && ny < g && !used[static_cast<std::size_t>(ny * g + nx)])
                    options.push_back(d);
            }
            if (options.empty())
                break;
            const int d = options[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1))];
            x += dx[d];
            y += dy[d];
            used[static_cast<std::size_t>(y * g + x)] = true;
            tiles.emplace_back(x, y);
        }
        if (tiles.size() == p.n_tiles)
            return tiles;
    }
    throw ConfigError("could not lay out a track of " + std::to_string(p.n_tiles) + " tiles");
}

} // namespace detail

/// Pure function of the state.
inline Image render(const EnvState& state)
{
    return std::visit(
        [](const auto& s) -> Image {
            using T = std::decay_t<decltype(s)>;
            const auto& cfg = s.cfg;
            const std::size_t g = cfg.grid();
            const std::size_t px = cfg.image_size / g;
            Image img(3, cfg.image_size, cfg.image_size);
            if constexpr (std::is_same_v<T, DodgeState>) {
                for (std::size_t y = 0; y < g; ++y)
                    for (std::size_t x = 0; x < g; ++x)
                        detail::fill_cell(img, px, x, y, (x == 0 || x + 1 == g) ? colors::wall : colors::background);
                detail::fill_cell(img, px, static_cast<std::size_t>(s.agent_x), g - 1, colors::agent);
                for (const auto& p : s.projectiles)
                    detail::fill_cell(img, px, static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y),
                                      colors::projectile);
            } else {
                for (std::size_t y = 0; y < g; ++y)
                    for (std::size_t x = 0; x < g; ++x)
                        detail::fill_cell(img, px, x, y,
                                          s.tile_at[y * g + x] >= 0 ? colors::road : colors::grass);
                const auto cx = std::min(cfg.image_size - 1, static_cast<std::size_t>(s.x * static_cast<double>(px)));
                const auto cy = std::min(cfg.image_size - 1, static_cast<std::size_t>(s.y * static_cast<double>(px)));
                for (std::size_t c = 0; c < 3; ++c)
                    img.at(c, cy, cx) = colors::car[c];
            }
            return img;
        },
        state);
}

/// Deterministic initial state for an episode seed.
inline EnvState env_reset(const EnvConfig& cfg, std::uint64_t episode_seed)
{
    cfg.validate();
    RandomSource rng(episode_seed, 0x656e76);
    if (cfg.kind == EnvKind::dodge) {
        DodgeState s;
        s.cfg = cfg;
        s.rng = rng;
        s.agent_x = static_cast<std::int64_t>(cfg.dodge.grid / 2);
        return s;
    }
    TrackState s;
    s.cfg = cfg;
    s.tiles = detail::generate_track(cfg.track, rng);
    s.tile_at.assign(cfg.track.grid * cfg.track.grid, -1);
    for (std::size_t i = 0; i < s.tiles.size(); ++i)
        s.tile_at[static_cast<std::size_t>(s.tiles[i].second) * cfg.track.grid +
                  static_cast<std::size_t>(s.tiles[i].first)] = static_cast<std::int64_t>(i);
    s.visited.assign(s.tiles.size(), false);
    s.x = static_cast<double>(s.tiles[0].first) + 0.5;
    s.y = static_cast<double>(s.tiles[0].second) + 0.5;
    s.heading = std::atan2(static_cast<double>(s.tiles[1].second - s.tiles[0].second),
                           static_cast<double>(s.tiles[1].first - s.tiles[0].first));
    return s;
}

/// Discrete strafe for a DodgeWorld action value: -1, 0 or +1.
inline int dodge_move(double a, double threshold)
{
    if (a < -threshold)
        return -1;
    if (a > threshold)
        return 1;
    return 0;
}

namespace detail {

inline double step_dodge(DodgeState& s, std::span<const double> action)
{
    const auto& p = s.cfg.dodge;
    const auto g = static_cast<std::int64_t>(p.grid);
    s.agent_x = std::clamp<std::int64_t>(s.agent_x + dodge_move(action[0], p.action_threshold), 1, g - 2);

    for (auto& pr : s.projectiles) {
        ++pr.y;
        if (pr.x != pr.target_x)
            pr.x += pr.target_x > pr.x ? 1 : -1;
    }
    std::erase_if(s.projectiles, [g](const Projectile& pr) { return pr.y >= g; });
    const bool hit = std::any_of(s.projectiles.begin(), s.projectiles.end(),
                                 [&](const Projectile& pr) { return pr.y == g - 1 && pr.x == s.agent_x; });

    if (s.rng.bernoulli(p.spawn_rate)) {
        Projectile pr;
        pr.x = s.rng.uniform_int(1, g - 2);
        pr.y = 0;
        if (s.rng.bernoulli(p.homing_prob))
            pr.target_x = std::clamp<std::int64_t>(s.agent_x + s.rng.uniform_int(-p.aim_jitter, p.aim_jitter), 1,
                                                   g - 2);
        else
            pr.target_x = pr.x;
        s.projectiles.push_back(pr);
    }

    ++s.t;
    const double reward = hit ? 0.0 : 1.0;
    if (!hit)
        ++s.steps_survived;
    s.total_reward += reward;
    s.done = hit || s.t >= s.cfg.max_steps;
    return reward;
}

inline double step_track(TrackState& s, std::span<const double> action)
{
    const auto& p = s.cfg.track;
    if (action.size() < 3)
        throw EvaluationError("track needs 3 action values (steer, gas, brake), got " +
                              std::to_string(action.size()));
    const double steer = std::clamp(action[0], -1.0, 1.0);
    const double gas = std::clamp(action[1], 0.0, 1.0);
    const double brake = std::clamp(action[2], 0.0, 1.0);
    s.heading += p.steer_rate * steer;
    s.speed += p.accel * gas - p.brake * brake - p.drag * s.speed;
    s.speed = std::clamp(s.speed, 0.0, p.max_speed);
    const double limit = std::nextafter(static_cast<double>(p.grid), 0.0);
    s.x = std::clamp(s.x + s.speed * std::cos(s.heading), 0.0, limit);
    s.y = std::clamp(s.y + s.speed * std::sin(s.heading), 0.0, limit);

    double reward = -p.frame_penalty;
    const auto cell = static_cast<std::size_t>(s.y) * p.grid + static_cast<std::size_t>(s.x);
    const auto tile = s.tile_at[cell];
    if (tile >= 0 && !s.visited[static_cast<std::size_t>(tile)]) {
        s.visited[static_cast<std::size_t>(tile)] = true;
        ++s.n_visited;
        reward += p.tile_reward_total / static_cast<double>(s.tiles.size());
    }
    ++s.t;
    s.total_reward += reward;
    s.done = s.t >= s.cfg.max_steps || s.n_visited == s.tiles.size();
    return reward;
}

} // namespace detail

inline bool is_done(const EnvState& state)
{
    return std::visit([](const auto& s) { return s.done; }, state);
}

/// Advances one frame. Stepping a finished episode is a logic error.
inline StepOutcome env_step(EnvState& state, std::span<const double> action)
{
    if (is_done(state))
        throw std::logic_error("env_step on a finished episode");
    if (action.empty())
        throw EvaluationError("empty action");
    StepOutcome out;
    out.reward = std::visit(
        [&](auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, DodgeState>)
                return detail::step_dodge(s, action);
            else
                return detail::step_track(s, action);
        },
        state);
    out.done = is_done(state);
    out.observation = render(state);
    return out;
}

inline EpisodeResult episode_result(const EnvState& state)
{
    return std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            EpisodeResult r;
            r.total_reward = s.total_reward;
            if constexpr (std::is_same_v<T, DodgeState>)
                r.steps_survived = s.steps_survived;
            else
                r.steps_survived = s.t;
            r.terminated_early = s.done && s.t < s.cfg.max_steps;
            return r;
        },
        state);
}

/// Checksum of a track's tile sequence.
inline std::uint64_t track_layout_checksum(const TrackState& s)
{
    io::Writer w;
    for (const auto& [x, y] : s.tiles) {
        w.i64(x);
        w.i64(y);
    }
    return io::fnv1a64(w.bytes());
}

/// Checksum of a rendered frame's exact bit patterns.
inline std::uint64_t frame_checksum(const Image& img, std::uint64_t h = 0xcbf29ce484222325ull)
{
    io::Writer w;
    w.f64_array(img.data);
    return io::fnv1a64(w.bytes(), h);
}

/// Mean score strictly above the configured bar.
inline bool solved_check(std::span<const double> scores, const EnvConfig& cfg)
{
    if (scores.size() != cfg.solved_rollouts)
        throw ConfigError("solved_check expects " + std::to_string(cfg.solved_rollouts) + " scores, got " +
                          std::to_string(scores.size()));
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    return mean > cfg.effective_solved_threshold();
}

} // namespace dip::envs
