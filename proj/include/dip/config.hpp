// config.hpp
//
// Run configuration and its JSON form. Missing keys keep their defaults;
// unknown keys are configuration errors.
#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "envs.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "io.hpp"
#include "moea.hpp"

namespace dip {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
    ArchitectureConfig arch;
    envs::EnvConfig env;
    moea::ProtectionPolicy policy;
    std::size_t population = 200;
    std::size_t generations = 200;
    double sigma = 0.03;
    std::size_t rollouts = 1;
    std::size_t elite_reevaluations = 3;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string output_dir = "run";
    std::size_t checkpoint_interval = 1;

    void validate() const
    {
        arch.validate();
        env.validate();
        if (population == 0)
            throw ConfigError("population must be >= 1");
        if (!(sigma > 0.0))
            throw ConfigError("sigma must be > 0");
        if (rollouts == 0)
            throw ConfigError("rollouts must be >= 1");
        if (workers == 0)
            throw ConfigError("workers must be >= 1");
        if (checkpoint_interval == 0)
            throw ConfigError("checkpoint-interval must be >= 1");
        if (arch.image_size != env.image_size)
            throw ConfigError("arch image size " + std::to_string(arch.image_size) + " differs from env image size " +
                              std::to_string(env.image_size));
        if (arch.image_channels != 3)
            throw ConfigError("environments render RGB; image-channels must be 3");
        if (env.kind == envs::EnvKind::track && arch.action_dim < 3)
            throw ConfigError("track needs action-dim >= 3");
        if (policy.random_age_min > policy.random_age_max)
            throw ConfigError("random-age range is empty");
    }
};

namespace detail {

class KeyChecker {
public:
    KeyChecker(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j.is_object())
            throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key))
            return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* sub(const char* key)
    {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("unknown key '" + where_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline json to_json(const ArchitectureConfig& a)
{
    return {{"image_size", a.image_size}, {"image_channels", a.image_channels}, {"channels", a.channels},
            {"kernel", a.kernel},         {"stride", a.stride},                 {"z_dim", a.z_dim},
            {"hidden_dim", a.hidden_dim}, {"n_mixtures", a.n_mixtures},         {"action_dim", a.action_dim},
            {"mdn_head", a.mdn_head_enabled}};
}

inline ArchitectureConfig arch_from_json(const json& j, ArchitectureConfig a = {})
{
    detail::KeyChecker k(j, "arch");
    k.get("image_size", a.image_size);
    k.get("image_channels", a.image_channels);
    k.get("channels", a.channels);
    k.get("kernel", a.kernel);
    k.get("stride", a.stride);
    k.get("z_dim", a.z_dim);
    k.get("hidden_dim", a.hidden_dim);
    k.get("n_mixtures", a.n_mixtures);
    k.get("action_dim", a.action_dim);
    k.get("mdn_head", a.mdn_head_enabled);
    k.finish();
    return a;
}

inline json to_json(const envs::EnvConfig& e)
{
    return {{"kind", envs::to_string(e.kind)},
            {"image_size", e.image_size},
            {"max_steps", e.max_steps},
            {"solved_rollouts", e.solved_rollouts},
            {"solved_threshold", e.solved_threshold},
            {"dodge",
             {{"grid", e.dodge.grid},
              {"spawn_rate", e.dodge.spawn_rate},
              {"homing_prob", e.dodge.homing_prob},
              {"aim_jitter", e.dodge.aim_jitter},
              {"action_threshold", e.dodge.action_threshold}}},
            {"track",
             {{"grid", e.track.grid},
              {"n_tiles", e.track.n_tiles},
              {"steer_rate", e.track.steer_rate},
              {"accel", e.track.accel},
              {"brake", e.track.brake},
              {"drag", e.track.drag},
              {"max_speed", e.track.max_speed},
              {"frame_penalty", e.track.frame_penalty},
              {"tile_reward_total", e.track.tile_reward_total}}}};
}

inline envs::EnvConfig env_from_json(const json& j, envs::EnvConfig e = {})
{
    detail::KeyChecker k(j, "env");
    std::string kind = envs::to_string(e.kind);
    k.get("kind", kind);
    e.kind = envs::env_kind_from_string(kind);
    k.get("image_size", e.image_size);
    k.get("max_steps", e.max_steps);
    k.get("solved_rollouts", e.solved_rollouts);
    k.get("solved_threshold", e.solved_threshold);
    if (const auto* d = k.sub("dodge")) {
        detail::KeyChecker kd(*d, "env.dodge");
        kd.get("grid", e.dodge.grid);
        kd.get("spawn_rate", e.dodge.spawn_rate);
        kd.get("homing_prob", e.dodge.homing_prob);
        kd.get("aim_jitter", e.dodge.aim_jitter);
        kd.get("action_threshold", e.dodge.action_threshold);
        kd.finish();
    }
    if (const auto* t = k.sub("track")) {
        detail::KeyChecker kt(*t, "env.track");
        kt.get("grid", e.track.grid);
        kt.get("n_tiles", e.track.n_tiles);
        kt.get("steer_rate", e.track.steer_rate);
        kt.get("accel", e.track.accel);
        kt.get("brake", e.track.brake);
        kt.get("drag", e.track.drag);
        kt.get("max_speed", e.track.max_speed);
        kt.get("frame_penalty", e.track.frame_penalty);
        kt.get("tile_reward_total", e.track.tile_reward_total);
        kt.finish();
    }
    k.finish();
    return e;
}

inline json to_json(const RunConfig& c)
{
    return {{"schema_version", kConfigSchemaVersion},
            {"arch", to_json(c.arch)},
            {"env", to_json(c.env)},
            {"policy",
             {{"kind", moea::to_string(c.policy.kind)},
              {"random_age_min", c.policy.random_age_min},
              {"random_age_max", c.policy.random_age_max}}},
            {"population", c.population},
            {"generations", c.generations},
            {"sigma", c.sigma},
            {"rollouts", c.rollouts},
            {"elite_reevaluations", c.elite_reevaluations},
            {"seed", c.seed},
            {"workers", c.workers},
            {"output_dir", c.output_dir},
            {"checkpoint_interval", c.checkpoint_interval}};
}

inline RunConfig run_config_from_json(const json& j, RunConfig c = {})
{
    detail::KeyChecker k(j, "config");
    int version = kConfigSchemaVersion;
    k.get("schema_version", version);
    if (version != kConfigSchemaVersion)
        throw ConfigError("unsupported config schema_version " + std::to_string(version));
    if (const auto* a = k.sub("arch"))
        c.arch = arch_from_json(*a, c.arch);
    if (const auto* e = k.sub("env"))
        c.env = env_from_json(*e, c.env);
    if (const auto* p = k.sub("policy")) {
        detail::KeyChecker kp(*p, "policy");
        std::string kind = moea::to_string(c.policy.kind);
        kp.get("kind", kind);
        c.policy.kind = moea::protection_from_string(kind);
        kp.get("random_age_min", c.policy.random_age_min);
        kp.get("random_age_max", c.policy.random_age_max);
        kp.finish();
    }
    k.get("population", c.population);
    k.get("generations", c.generations);
    k.get("sigma", c.sigma);
    k.get("rollouts", c.rollouts);
    k.get("elite_reevaluations", c.elite_reevaluations);
    k.get("seed", c.seed);
    k.get("workers", c.workers);
    k.get("output_dir", c.output_dir);
    k.get("checkpoint_interval", c.checkpoint_interval);
    k.finish();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace dip
