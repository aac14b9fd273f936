// agent.hpp
//
// World-model agent: conv encoder -> latent z_t, LSTM over (z_t, a_{t-1}),
// linear tanh controller over (z_t, h_t).
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "envs.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "nn.hpp"
#include "random.hpp"

namespace dip {

struct AgentState {
    std::vector<double> z;
    std::vector<double> h;
    std::vector<double> c;
    std::vector<double> last_action;

    /// Episode-start state: all zeros.
    static AgentState initial(const ArchitectureConfig& arch)
    {
        return {std::vector<double>(arch.z_dim, 0.0), std::vector<double>(arch.hidden_dim, 0.0),
                std::vector<double>(arch.hidden_dim, 0.0), std::vector<double>(arch.action_dim, 0.0)};
    }

    bool operator==(const AgentState&) const = default;
};

/// A genome bound to its resolved layer layout.
class Agent {
public:
    explicit Agent(Genome genome)
        : genome_(std::move(genome)),
          visual_(component_layout(genome_.arch(), Component::visual)),
          memory_(component_layout(genome_.arch(), Component::memory)),
          controller_(component_layout(genome_.arch(), Component::controller))
    {
    }

    const Genome& genome() const { return genome_; }
    const ArchitectureConfig& arch() const { return genome_.arch(); }

    /// Latent code: the encoder's mean head.
    std::vector<double> encode(const Image& obs) const
    {
        const auto& a = arch();
        if (obs.channels != a.image_channels || obs.height != a.image_size || obs.width != a.image_size)
            throw ConfigError("observation shape " + obs.shape().str() + " does not match architecture " +
                              std::to_string(a.image_channels) + "x" + std::to_string(a.image_size) + "x" +
                              std::to_string(a.image_size));
        Image x = nn::conv2d_forward(obs, genome_.weights(Component::visual, visual_[0]), visual_[0].spec);
        for (std::size_t i = 1; i < a.channels.size(); ++i)
            x = nn::conv2d_forward(x, genome_.weights(Component::visual, visual_[i]), visual_[i].spec);
        const auto& mu = visual_[a.channels.size()];
        return nn::linear_forward(x.data, genome_.weights(Component::visual, mu), mu.spec);
    }

    std::vector<double> memory_input(std::span<const double> z, std::span<const double> last_action) const
    {
        std::vector<double> in(z.begin(), z.end());
        in.insert(in.end(), last_action.begin(), last_action.end());
        return in;
    }

    nn::LstmState remember(std::span<const double> z, const AgentState& prev) const
    {
        const auto in = memory_input(z, prev.last_action);
        return nn::lstm_cell_forward(in, prev.h, prev.c, genome_.weights(Component::memory, memory_[0]));
    }

    /// Controller output tanh(W [z, h] + b).
    std::vector<double> act(std::span<const double> z, std::span<const double> h) const
    {
        std::vector<double> in(z.begin(), z.end());
        in.insert(in.end(), h.begin(), h.end());
        return nn::linear_forward(in, genome_.weights(Component::controller, controller_[0]), controller_[0].spec);
    }

    /// Predicted mixture over the next latent code; unused during control.
    nn::MixtureParams predict(std::span<const double> h) const
    {
        if (!arch().mdn_head_enabled)
            throw ConfigError("genome has no MDN head");
        return nn::mdn_head_forward(h, genome_.weights(Component::memory, memory_[1]), arch().n_mixtures,
                                    arch().z_dim);
    }

    std::pair<std::vector<double>, AgentState> step(const AgentState& prev, const Image& obs) const
    {
        const auto& a = arch();
        if (prev.h.size() != a.hidden_dim || prev.c.size() != a.hidden_dim || prev.last_action.size() != a.action_dim)
            throw ConfigError("agent state does not match architecture");
        AgentState next;
        next.z = encode(obs);
        auto mem = remember(next.z, prev);
        next.h = std::move(mem.h);
        next.c = std::move(mem.c);
        next.last_action = act(next.z, next.h);
        return {next.last_action, std::move(next)};
    }

private:
    Genome genome_;
    std::vector<LayerSlot> visual_;
    std::vector<LayerSlot> memory_;
    std::vector<LayerSlot> controller_;
};

inline std::pair<std::vector<double>, AgentState> agent_step(const Genome& genome, const AgentState& state,
                                                             const Image& obs)
{
    return Agent(genome).step(state, obs);
}

/// One frame of a recorded rollout.
struct StepRecord {
    std::size_t t = 0;
    std::vector<double> z;
    std::vector<double> h;
    std::vector<double> action;
    double reward = 0.0;
    Image observation;       // frame the agent acted on
    AgentState incoming;     // recurrent state before the step
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Runs one episode from a fresh agent state.
inline envs::EpisodeResult run_episode(const Agent& agent, const envs::EnvConfig& env_cfg, std::uint64_t seed,
                                       const StepObserver& observer = {})
{
    auto env = envs::env_reset(env_cfg, seed);
    Image obs = envs::render(env);
    AgentState state = AgentState::initial(agent.arch());
    std::size_t t = 0;
    while (!envs::is_done(env)) {
        auto [action, next] = agent.step(state, obs);
        auto out = envs::env_step(env, action);
        if (observer) {
            StepRecord rec{t, next.z, next.h, action, out.reward, obs, state};
            observer(rec);
        }
        state = std::move(next);
        obs = std::move(out.observation);
        ++t;
    }
    return envs::episode_result(env);
}

/// Mean total reward over `n_rollouts` episodes with seeds drawn from `rng`.
inline double evaluate(const Genome& genome, const envs::EnvConfig& env_cfg, std::size_t n_rollouts,
                       RandomSource& rng)
{
    if (n_rollouts == 0)
        throw ConfigError("rollouts per evaluation must be >= 1");
    const Agent agent(genome);
    double sum = 0.0;
    for (std::size_t i = 0; i < n_rollouts; ++i)
        sum += run_episode(agent, env_cfg, rng.next_u64()).total_reward;
    return sum / static_cast<double>(n_rollouts);
}

} // namespace dip
