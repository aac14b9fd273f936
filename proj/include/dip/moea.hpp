// moea.hpp
//
// NSGA-II with an innovation-protection age objective. Age is minimized,
// accumulated reward is maximized. Templated on the genome type; the
// generation step finds `mutate(genome, sigma, rng)` by ADL.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "genome.hpp"
#include "random.hpp"

namespace dip::moea {

enum class ProtectionKind { dip, controller_protect, memory_and_controller_protect, random_age, none };

inline const char* to_string(ProtectionKind k)
{
    switch (k) {
    case ProtectionKind::dip:
        return "dip";
    case ProtectionKind::controller_protect:
        return "controller-protect";
    case ProtectionKind::memory_and_controller_protect:
        return "memory-and-controller-protect";
    case ProtectionKind::random_age:
        return "random-age";
    case ProtectionKind::none:
        return "none";
    }
    return "?";
}

inline ProtectionKind protection_from_string(const std::string& s)
{
    for (auto k : {ProtectionKind::dip, ProtectionKind::controller_protect,
                   ProtectionKind::memory_and_controller_protect, ProtectionKind::random_age, ProtectionKind::none})
        if (s == to_string(k))
            return k;
    throw ConfigError("unknown protection policy '" + s + "'");
}

struct ProtectionPolicy {
    ProtectionKind kind = ProtectionKind::dip;
    std::uint64_t random_age_min = 0;
    std::uint64_t random_age_max = 20;

    /// Whether age takes part in dominance. False only for the plain GA.
    bool uses_age() const { return kind != ProtectionKind::none; }

    /// Whether a mutation of `c` resets age to zero.
    bool resets_on(Component c) const
    {
        switch (kind) {
        case ProtectionKind::dip:
            return c == Component::visual || c == Component::memory;
        case ProtectionKind::controller_protect:
            return c == Component::controller;
        case ProtectionKind::memory_and_controller_protect:
            return c == Component::memory || c == Component::controller;
        case ProtectionKind::random_age:
        case ProtectionKind::none:
            return false;
        }
        return false;
    }
};

template <class G>
struct BasicIndividual {
    explicit BasicIndividual(G g) : genome(std::move(g)) {}

    G genome;
    std::uint64_t age = 0;
    std::optional<double> reward;
    std::size_t rank = 0;
    double crowding = 0.0;
    std::uint64_t id = 0;
    std::optional<std::uint64_t> parent_id;
    std::optional<Component> mutated;

    double checked_reward() const
    {
        if (!reward)
            throw std::logic_error("individual " + std::to_string(id) + " has not been evaluated");
        return *reward;
    }
};

template <class G>
struct BasicPopulation {
    std::vector<BasicIndividual<G>> members;
    std::uint64_t generation = 0;
    std::uint64_t next_id = 0;
};

using Individual = BasicIndividual<Genome>;
using Population = BasicPopulation<Genome>;

/// Two-objective Pareto dominance: age no larger, reward no smaller, one strict.
template <class G>
bool dominates(const BasicIndividual<G>& a, const BasicIndividual<G>& b)
{
    const double ra = a.checked_reward();
    const double rb = b.checked_reward();
    return a.age <= b.age && ra >= rb && (a.age < b.age || ra > rb);
}

/// Policy-aware dominance; without age this is scalar reward comparison.
template <class G>
bool dominates(const BasicIndividual<G>& a, const BasicIndividual<G>& b, const ProtectionPolicy& policy)
{
    if (!policy.uses_age())
        return a.checked_reward() > b.checked_reward();
    return dominates(a, b);
}

namespace detail {

/// Objective values in minimization form.
template <class G>
std::vector<double> objectives(const BasicIndividual<G>& ind, const ProtectionPolicy& policy)
{
    if (policy.uses_age())
        return {static_cast<double>(ind.age), -ind.checked_reward()};
    return {-ind.checked_reward()};
}

} // namespace detail

/// Fast non-dominated sort. Writes `rank` and returns the fronts as index
/// sets, each in ascending index order.
template <class G>
std::vector<std::vector<std::size_t>> nondominated_sort(std::vector<BasicIndividual<G>>& members,
                                                        const ProtectionPolicy& policy = {})
{
    const std::size_t n = members.size();
    for (const auto& m : members)
        m.checked_reward();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> counts(n, 0);
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            if (p == q)
                continue;
            if (dominates(members[p], members[q], policy))
                dominated[p].push_back(q);
            else if (dominates(members[q], members[p], policy))
                ++counts[p];
        }
        if (counts[p] == 0)
            current.push_back(p);
    }
    std::size_t rank = 0;
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (auto p : current) {
            members[p].rank = rank;
            for (auto q : dominated[p])
                if (--counts[q] == 0)
                    next.push_back(q);
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
        ++rank;
    }
    return fronts;
}

/// Crowding distance of one front, aligned with `front`; also written to the
/// members. Objectives with zero spread across the front contribute nothing.
template <class G>
std::vector<double> crowding_distance(const std::vector<std::size_t>& front,
                                      std::vector<BasicIndividual<G>>& members, const ProtectionPolicy& policy = {})
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const std::size_t k = front.size();
    std::vector<double> dist(k, 0.0);
    if (k <= 2) {
        std::fill(dist.begin(), dist.end(), inf);
    } else {
        std::vector<std::vector<double>> obj(k);
        for (std::size_t i = 0; i < k; ++i)
            obj[i] = detail::objectives(members[front[i]], policy);
        const std::size_t n_obj = obj[0].size();
        std::vector<std::size_t> order(k);
        for (std::size_t m = 0; m < n_obj; ++m) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return obj[a][m] < obj[b][m]; });
            const double lo = obj[order.front()][m];
            const double hi = obj[order.back()][m];
            if (!(hi > lo))
                continue;
            dist[order.front()] = inf;
            dist[order.back()] = inf;
            for (std::size_t i = 1; i + 1 < k; ++i)
                dist[order[i]] += (obj[order[i + 1]][m] - obj[order[i - 1]][m]) / (hi - lo);
        }
    }
    for (std::size_t i = 0; i < k; ++i)
        members[front[i]].crowding = dist[i];
    return dist;
}

template <class G>
std::vector<std::vector<std::size_t>> assign_rank_and_crowding(std::vector<BasicIndividual<G>>& members,
                                                               const ProtectionPolicy& policy)
{
    auto fronts = nondominated_sort(members, policy);
    for (const auto& f : fronts)
        crowding_distance(f, members, policy);
    return fronts;
}

/// Indices ordered by (rank asc, crowding desc), stable on index.
template <class G>
std::vector<std::size_t> crowded_order(const std::vector<BasicIndividual<G>>& members)
{
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (members[a].rank != members[b].rank)
            return members[a].rank < members[b].rank;
        return members[a].crowding > members[b].crowding;
    });
    return order;
}

/// Size of the tournament pool: the better half, at least one.
inline std::size_t selection_pool_size(std::size_t n) { return std::max<std::size_t>(1, n / 2); }

/// `n` binary tournaments over the better half of a ranked population.
/// Returns member indices. Contestants are drawn independently; a lower
/// rank wins, then larger crowding, then a coin flip.
template <class G>
std::vector<std::size_t> select_parents(const std::vector<BasicIndividual<G>>& members, std::size_t n,
                                        RandomSource& rng)
{
    if (members.empty())
        throw std::logic_error("select_parents on an empty population");
    const auto order = crowded_order(members);
    const std::size_t pool = selection_pool_size(members.size());
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto a = order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool) - 1))];
        const auto b = order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool) - 1))];
        std::size_t winner;
        if (a == b)
            winner = a;
        else if (members[a].rank != members[b].rank)
            winner = members[a].rank < members[b].rank ? a : b;
        else if (members[a].crowding != members[b].crowding)
            winner = members[a].crowding > members[b].crowding ? a : b;
        else
            winner = rng.bernoulli(0.5) ? a : b;
        out.push_back(winner);
    }
    return out;
}

/// Age bookkeeping for a freshly mutated child whose age was copied from its
/// parent.
template <class G>
void apply_protection(const MutationEvent& event, BasicIndividual<G>& child, const ProtectionPolicy& policy,
                      RandomSource& rng)
{
    if (policy.kind == ProtectionKind::random_age) {
        child.age = static_cast<std::uint64_t>(rng.uniform_int(static_cast<std::int64_t>(policy.random_age_min),
                                                               static_cast<std::int64_t>(policy.random_age_max)));
        return;
    }
    if (policy.resets_on(event.component))
        child.age = 0;
}

template <class G>
void increment_ages(std::vector<BasicIndividual<G>>& members)
{
    for (auto& m : members)
        ++m.age;
}

/// Elitist truncation: fill by front, split the last front by crowding.
template <class G>
std::vector<BasicIndividual<G>> truncate(std::vector<BasicIndividual<G>> merged, std::size_t n,
                                         const ProtectionPolicy& policy)
{
    auto fronts = assign_rank_and_crowding(merged, policy);
    std::vector<BasicIndividual<G>> out;
    out.reserve(n);
    for (const auto& f : fronts) {
        if (out.size() + f.size() <= n) {
            for (auto i : f)
                out.push_back(merged[i]);
        } else {
            std::vector<std::size_t> rest(f);
            std::stable_sort(rest.begin(), rest.end(),
                             [&](std::size_t a, std::size_t b) { return merged[a].crowding > merged[b].crowding; });
            for (std::size_t i = 0; out.size() < n; ++i)
                out.push_back(merged[rest[i]]);
        }
        if (out.size() == n)
            break;
    }
    return out;
}

/// Scores one genome. Throwing marks the evaluation as failed.
template <class G>
using Evaluator = std::function<double(const G&, std::uint64_t generation, std::size_t index)>;

struct EvalFailure {
    std::uint64_t id = 0;
    std::string message;
};

/// Runs `evaluator` over the listed members with up to `workers` threads.
/// Results land in member slots, so the outcome is independent of
/// scheduling. Failed evaluations receive `failure_reward`.
template <class G>
std::vector<EvalFailure> evaluate_members(std::vector<BasicIndividual<G>>& members,
                                          const std::vector<std::size_t>& which, const Evaluator<G>& evaluator,
                                          std::uint64_t generation, std::size_t workers, double failure_reward)
{
    std::vector<std::optional<std::string>> errors(which.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < which.size(); k = next++) {
            auto& m = members[which[k]];
            try {
                m.reward = evaluator(m.genome, generation, which[k]);
            } catch (const std::exception& e) {
                m.reward = failure_reward;
                errors[k] = e.what();
            }
        }
    };
    const std::size_t n_threads = std::min(std::max<std::size_t>(workers, 1), which.size());
    if (n_threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back(work);
    }
    std::vector<EvalFailure> failures;
    for (std::size_t k = 0; k < which.size(); ++k)
        if (errors[k])
            failures.push_back({members[which[k]].id, *errors[k]});
    return failures;
}

struct StepConfig {
    double sigma = 0.03;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    double failure_reward = 0.0;
};

struct StepStats {
    std::array<std::size_t, 3> mutations{};
    std::array<std::size_t, 3> resets{};
    std::vector<EvalFailure> failures;
};

template <class G>
struct StepResult {
    BasicPopulation<G> population;
    StepStats stats;
};

/// One elitist NSGA-II generation with innovation protection:
/// age increment, ranking, tournament selection over the better half,
/// single-component mutation, age reset per policy, child evaluation,
/// merge and truncation back to the population size. Random streams derive
/// from (seed, generation, child index).
template <class G>
StepResult<G> generation_step(const BasicPopulation<G>& pop, const ProtectionPolicy& policy,
                              const Evaluator<G>& evaluator, const StepConfig& cfg)
{
    const std::size_t n = pop.members.size();
    if (n == 0)
        throw std::logic_error("generation_step on an empty population");
    const std::uint64_t gen = pop.generation + 1;

    StepResult<G> result;
    auto parents = pop.members;
    increment_ages(parents);
    assign_rank_and_crowding(parents, policy);

    auto select_rng = RandomSource::derive(cfg.seed, gen, StreamPurpose::select, 0);
    const auto chosen = select_parents(parents, n, select_rng);

    std::vector<BasicIndividual<G>> children;
    children.reserve(n);
    std::uint64_t next_id = pop.next_id;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& parent = parents[chosen[i]];
        auto rng = RandomSource::derive(cfg.seed, gen, StreamPurpose::mutate, i);
        auto [genome, event] = mutate(parent.genome, cfg.sigma, rng);
        BasicIndividual<G> child{std::move(genome)};
        child.age = parent.age;
        child.id = next_id++;
        child.parent_id = parent.id;
        child.mutated = event.component;
        apply_protection(event, child, policy, rng);
        const auto c = static_cast<std::size_t>(event.component);
        ++result.stats.mutations[c];
        if (policy.resets_on(event.component))
            ++result.stats.resets[c];
        children.push_back(std::move(child));
    }

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    result.stats.failures = evaluate_members(children, all, evaluator, gen, cfg.workers, cfg.failure_reward);

    std::vector<BasicIndividual<G>> merged = std::move(parents);
    merged.insert(merged.end(), std::make_move_iterator(children.begin()), std::make_move_iterator(children.end()));
    result.population.members = truncate(std::move(merged), n, policy);
    assign_rank_and_crowding(result.population.members, policy);
    result.population.generation = gen;
    result.population.next_id = next_id;
    return result;
}

} // namespace dip::moea
