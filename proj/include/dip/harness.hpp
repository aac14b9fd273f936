// harness.hpp
//
// Experiment driver: population evaluation, elite re-evaluation, the
// generation loop, run log, elite archive and resumable checkpoints.
//
// Output directory layout:
//   config.json    run configuration echo
//   log.jsonl      one GenerationRecord per line
//   timing.jsonl   wall-clock per generation (kept out of the log so the
//                  log stays bitwise reproducible)
//   elites.bin     append-only elite archive
//   best.genome    best-so-far elite
//   checkpoint.bin resumable state
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agent.hpp"
#include "config.hpp"
#include "envs.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "io.hpp"
#include "moea.hpp"
#include "random.hpp"

namespace dip {

namespace fs = std::filesystem;

inline constexpr int kLogSchemaVersion = 1;

struct MemberSummary {
    std::uint64_t id = 0;
    std::uint64_t age = 0;
    double reward = 0.0;
    bool operator==(const MemberSummary&) const = default;
};

struct GenerationRecord {
    std::uint64_t generation = 0;
    double best_reward = 0.0;
    double mean_reward = 0.0;
    double median_reward = 0.0;
    double mean_age = 0.0;
    std::map<std::uint64_t, std::size_t> age_histogram;
    std::array<std::size_t, 3> mutations{};
    std::array<std::size_t, 3> resets{};
    std::vector<std::string> failures;
    std::uint64_t elite_id = 0;
    double elite_reward = 0.0;
    std::uint64_t elite_age = 0;
    double best_so_far = 0.0;
    std::vector<MemberSummary> members;

    bool operator==(const GenerationRecord&) const = default;
};

inline json to_json(const GenerationRecord& r)
{
    json hist = json::array();
    for (const auto& [age, n] : r.age_histogram)
        hist.push_back({age, n});
    json members = json::array();
    for (const auto& m : r.members)
        members.push_back({m.id, m.age, m.reward});
    auto per_component = [](const std::array<std::size_t, 3>& v) {
        return json{{"visual", v[0]}, {"memory", v[1]}, {"controller", v[2]}};
    };
    return {{"schema", kLogSchemaVersion},
            {"generation", r.generation},
            {"best_reward", r.best_reward},
            {"mean_reward", r.mean_reward},
            {"median_reward", r.median_reward},
            {"mean_age", r.mean_age},
            {"age_histogram", hist},
            {"mutations", per_component(r.mutations)},
            {"resets", per_component(r.resets)},
            {"failures", r.failures},
            {"elite_id", r.elite_id},
            {"elite_reward", r.elite_reward},
            {"elite_age", r.elite_age},
            {"best_so_far", r.best_so_far},
            {"members", members}};
}

inline GenerationRecord record_from_json(const json& j)
{
    try {
        if (j.at("schema").get<int>() != kLogSchemaVersion)
            throw ConfigError("unsupported log schema " + j.at("schema").dump());
        GenerationRecord r;
        r.generation = j.at("generation").get<std::uint64_t>();
        r.best_reward = j.at("best_reward").get<double>();
        r.mean_reward = j.at("mean_reward").get<double>();
        r.median_reward = j.at("median_reward").get<double>();
        r.mean_age = j.at("mean_age").get<double>();
        for (const auto& e : j.at("age_histogram"))
            r.age_histogram[e.at(0).get<std::uint64_t>()] = e.at(1).get<std::size_t>();
        for (auto c : kComponents) {
            r.mutations[static_cast<std::size_t>(c)] = j.at("mutations").at(to_string(c)).get<std::size_t>();
            r.resets[static_cast<std::size_t>(c)] = j.at("resets").at(to_string(c)).get<std::size_t>();
        }
        r.failures = j.at("failures").get<std::vector<std::string>>();
        r.elite_id = j.at("elite_id").get<std::uint64_t>();
        r.elite_reward = j.at("elite_reward").get<double>();
        r.elite_age = j.at("elite_age").get<std::uint64_t>();
        r.best_so_far = j.at("best_so_far").get<double>();
        for (const auto& m : j.at("members"))
            r.members.push_back({m.at(0).get<std::uint64_t>(), m.at(1).get<std::uint64_t>(), m.at(2).get<double>()});
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed log record: ") + e.what());
    }
}

inline std::vector<GenerationRecord> read_run_log(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<GenerationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }
    return out;
}

struct ArchiveEntry {
    std::uint64_t generation = 0;
    std::uint64_t id = 0;
    double reward = 0.0;
    std::uint64_t age = 0;
    double population_mean_age = 0.0;
    Genome genome;
};

inline io::Bytes encode_archive_entry(const ArchiveEntry& e)
{
    io::Writer w;
    w.raw("DIPE");
    w.u64(e.generation);
    w.u64(e.id);
    w.f64(e.reward);
    w.u64(e.age);
    w.f64(e.population_mean_age);
    w.blob(serialize_genome(e.genome));
    return w.take();
}

inline std::vector<ArchiveEntry> read_archive(std::span<const std::uint8_t> bytes)
{
    io::Reader r(bytes, "elite archive");
    std::vector<ArchiveEntry> out;
    while (r.remaining() > 0) {
        r.expect_magic("DIPE");
        const auto generation = r.u64();
        const auto id = r.u64();
        const auto reward = r.f64();
        const auto age = r.u64();
        const auto mean_age = r.f64();
        const auto blob = r.blob();
        out.push_back({generation, id, reward, age, mean_age, deserialize_genome(blob)});
    }
    return out;
}

inline std::vector<ArchiveEntry> load_archive(const fs::path& path) { return read_archive(io::read_file(path)); }

struct RunLog {
    RunConfig config;
    std::vector<GenerationRecord> records;
    std::vector<ArchiveEntry> archive;
};

/// Evaluation seeds are shared by every individual of a generation.
inline double evaluate_for_generation(const Genome& g, const RunConfig& cfg, std::uint64_t generation)
{
    auto rng = RandomSource::derive(cfg.seed, generation, StreamPurpose::episode, 0);
    return evaluate(g, cfg.env, cfg.rollouts, rng);
}

/// Top-k members by reward get one more evaluation; the stored reward
/// becomes the mean of the old and new scores. `reeval(genome, k)` scores
/// the k-th best.
inline std::vector<std::size_t> reevaluate_elites(moea::Population& pop, std::size_t k,
                                                  const std::function<double(const Genome&, std::size_t)>& reeval)
{
    std::vector<std::size_t> order(pop.members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pop.members[a].checked_reward() > pop.members[b].checked_reward();
    });
    order.resize(std::min(k, order.size()));
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        auto& m = pop.members[order[rank]];
        const double fresh = reeval(m.genome, rank);
        m.reward = 0.5 * (*m.reward + fresh);
    }
    return order;
}

inline std::size_t best_member(const moea::Population& pop)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < pop.members.size(); ++i)
        if (pop.members[i].checked_reward() > pop.members[best].checked_reward())
            best = i;
    return best;
}

inline GenerationRecord summarize(const moea::Population& pop, const moea::StepStats& stats, double best_so_far)
{
    GenerationRecord r;
    r.generation = pop.generation;
    std::vector<double> rewards;
    double age_sum = 0.0;
    for (const auto& m : pop.members) {
        rewards.push_back(m.checked_reward());
        age_sum += static_cast<double>(m.age);
        ++r.age_histogram[m.age];
        r.members.push_back({m.id, m.age, *m.reward});
    }
    const double n = static_cast<double>(rewards.size());
    r.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    r.mean_age = age_sum / n;
    std::vector<double> sorted = rewards;
    std::sort(sorted.begin(), sorted.end());
    const auto mid = sorted.size() / 2;
    r.median_reward = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    r.best_reward = sorted.back();
    const auto& elite = pop.members[best_member(pop)];
    r.elite_id = elite.id;
    r.elite_reward = *elite.reward;
    r.elite_age = elite.age;
    r.mutations = stats.mutations;
    r.resets = stats.resets;
    for (const auto& f : stats.failures)
        r.failures.push_back("id " + std::to_string(f.id) + ": " + f.message);
    r.best_so_far = best_so_far;
    return r;
}

// Checkpoint file, version 1 (see docs/formats.md).

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    json config;
    moea::Population population;
    double best_so_far = 0.0;
    bool has_best = false;
    std::uint64_t archive_bytes = 0;
    std::uint64_t archive_entries = 0;
    std::vector<std::string> log_lines;
};

inline io::Bytes encode_checkpoint(const Checkpoint& cp)
{
    io::Writer w;
    w.raw("DIPC");
    w.u32(kCheckpointVersion);
    w.str(cp.config.dump());
    w.u64(cp.population.generation);
    w.u64(cp.population.next_id);
    w.u8(cp.has_best ? 1 : 0);
    w.f64(cp.best_so_far);
    w.u64(cp.archive_bytes);
    w.u64(cp.archive_entries);
    w.u64(cp.log_lines.size());
    for (const auto& l : cp.log_lines)
        w.str(l);
    w.u64(cp.population.members.size());
    for (const auto& m : cp.population.members) {
        w.u64(m.id);
        w.u8(m.parent_id ? 1 : 0);
        w.u64(m.parent_id.value_or(0));
        w.u64(m.age);
        w.u8(m.reward ? 1 : 0);
        w.f64(m.reward.value_or(0.0));
        w.u64(m.rank);
        w.f64(m.crowding);
        w.u8(m.mutated ? static_cast<std::uint8_t>(*m.mutated) : 0xFF);
        w.blob(serialize_genome(m.genome));
    }
    w.u64(io::fnv1a64(w.bytes()));
    return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 8)
        throw CorruptDataError("checkpoint: truncated stream");
    const auto body = bytes.first(bytes.size() - 8);
    io::Reader tail(bytes.subspan(bytes.size() - 8), "checkpoint");
    const auto stored = tail.u64();
    const auto computed = io::fnv1a64(body);
    if (stored != computed) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "checksum mismatch (stored %016llx, computed %016llx)",
                      static_cast<unsigned long long>(stored), static_cast<unsigned long long>(computed));
        throw CorruptDataError(std::string("checkpoint: ") + buf);
    }
    io::Reader r(body, "checkpoint");
    r.expect_magic("DIPC");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        r.fail("unsupported version " + std::to_string(version));
    Checkpoint cp;
    cp.config = json::parse(r.str());
    cp.population.generation = r.u64();
    cp.population.next_id = r.u64();
    cp.has_best = r.u8() != 0;
    cp.best_so_far = r.f64();
    cp.archive_bytes = r.u64();
    cp.archive_entries = r.u64();
    const auto n_lines = r.u64();
    for (std::uint64_t i = 0; i < n_lines; ++i)
        cp.log_lines.push_back(r.str());
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto id = r.u64();
        const bool has_parent = r.u8() != 0;
        const auto parent = r.u64();
        const auto age = r.u64();
        const bool has_reward = r.u8() != 0;
        const auto reward = r.f64();
        const auto rank = r.u64();
        const auto crowding = r.f64();
        const auto mutated = r.u8();
        const auto blob = r.blob();
        moea::Individual m{deserialize_genome(blob)};
        m.id = id;
        if (has_parent)
            m.parent_id = parent;
        m.age = age;
        if (has_reward)
            m.reward = reward;
        m.rank = static_cast<std::size_t>(rank);
        m.crowding = crowding;
        if (mutated != 0xFF)
            m.mutated = static_cast<Component>(mutated);
        cp.population.members.push_back(std::move(m));
    }
    if (r.remaining() != 0)
        r.fail("trailing bytes");
    return cp;
}

struct RunOptions {
    bool resume = false;
    bool quiet = true;
    /// Polled after each generation's checkpoint; returning true stops the
    /// run there, as an interruption would.
    std::function<bool(std::uint64_t generation)> stop_after;
};

namespace detail {

/// Configuration fields that must agree between a checkpoint and a resume.
inline json resume_identity(RunConfig c)
{
    c.generations = 0;
    c.workers = 1;
    c.output_dir.clear();
    c.checkpoint_interval = 1;
    return to_json(c);
}

class RunWriter {
public:
    explicit RunWriter(const fs::path& dir) : dir_(dir) {}

    fs::path path(const char* name) const { return dir_ / name; }

    void append_line(const char* name, const std::string& line)
    {
        std::ofstream out(path(name), std::ios::app);
        if (!out)
            throw IoError("cannot append to " + path(name).string());
        out << line << '\n';
    }

    void append_bytes(const char* name, std::span<const std::uint8_t> bytes)
    {
        std::ofstream out(path(name), std::ios::binary | std::ios::app);
        if (!out)
            throw IoError("cannot append to " + path(name).string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }

    void rewrite_lines(const char* name, const std::vector<std::string>& lines)
    {
        std::string text;
        for (const auto& l : lines)
            text += l + '\n';
        io::write_file(path(name), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

private:
    fs::path dir_;
};

} // namespace detail

/// Runs (or resumes) an experiment and returns its log. Generation records
/// are produced for generations 1..cfg.generations; the initial population
/// is evaluated under generation 0.
inline RunLog run_experiment(const RunConfig& cfg, const RunOptions& opts = {})
{
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw IoError("cannot create output directory " + dir.string());
    {
        std::ofstream probe(dir / ".write_test");
        if (!probe)
            throw IoError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(dir / ".write_test", ec);

    detail::RunWriter out(dir);
    RunLog log;
    log.config = cfg;

    const moea::Evaluator<Genome> evaluator = [&cfg](const Genome& g, std::uint64_t gen, std::size_t) {
        return evaluate_for_generation(g, cfg, gen);
    };
    auto reevaluate = [&cfg](moea::Population& pop) {
        reevaluate_elites(pop, cfg.elite_reevaluations, [&](const Genome& g, std::size_t rank) {
            auto rng = RandomSource::derive(cfg.seed, pop.generation, StreamPurpose::reevaluate, rank);
            return evaluate(g, cfg.env, cfg.rollouts, rng);
        });
        moea::assign_rank_and_crowding(pop.members, cfg.policy);
    };

    moea::Population pop;
    double best_so_far = 0.0;
    bool has_best = false;
    std::uint64_t archive_bytes = 0;
    std::vector<std::string> log_lines;

    auto archive_if_improved = [&](const moea::Population& p) {
        const auto& elite = p.members[best_member(p)];
        if (has_best && !(*elite.reward > best_so_far))
            return;
        has_best = true;
        best_so_far = *elite.reward;
        double age_sum = 0.0;
        for (const auto& m : p.members)
            age_sum += static_cast<double>(m.age);
        ArchiveEntry e{p.generation, elite.id, *elite.reward, elite.age,
                       age_sum / static_cast<double>(p.members.size()), elite.genome};
        const auto bytes = encode_archive_entry(e);
        out.append_bytes("elites.bin", bytes);
        archive_bytes += bytes.size();
        log.archive.push_back(std::move(e));
        save_genome(out.path("best.genome"), elite.genome);
    };

    auto write_checkpoint = [&] {
        Checkpoint cp;
        cp.config = to_json(cfg);
        cp.population = pop;
        cp.best_so_far = best_so_far;
        cp.has_best = has_best;
        cp.archive_bytes = archive_bytes;
        cp.archive_entries = log.archive.size();
        cp.log_lines = log_lines;
        io::write_file_atomic(out.path("checkpoint.bin"), encode_checkpoint(cp));
    };

    const std::string config_text = to_json(cfg).dump(2) + "\n";
    io::write_file(out.path("config.json"),
                   std::span(reinterpret_cast<const std::uint8_t*>(config_text.data()), config_text.size()));

    bool resumed = false;
    if (opts.resume && fs::exists(out.path("checkpoint.bin"))) {
        auto cp = decode_checkpoint(io::read_file(out.path("checkpoint.bin")));
        if (detail::resume_identity(run_config_from_json(cp.config)) != detail::resume_identity(cfg))
            throw ConfigError("checkpoint was written by a different run configuration");
        const auto archive_path = out.path("elites.bin");
        if (cp.archive_bytes > 0) {
            if (!fs::exists(archive_path) || fs::file_size(archive_path) < cp.archive_bytes)
                throw CorruptDataError("checkpoint: elite archive shorter than recorded (" +
                                       std::to_string(cp.archive_bytes) + " bytes)");
            fs::resize_file(archive_path, cp.archive_bytes);
            log.archive = load_archive(archive_path);
            if (log.archive.size() != cp.archive_entries)
                throw CorruptDataError("checkpoint: elite archive entry count mismatch");
        } else {
            fs::remove(archive_path, ec);
        }
        pop = std::move(cp.population);
        best_so_far = cp.best_so_far;
        has_best = cp.has_best;
        archive_bytes = cp.archive_bytes;
        log_lines = std::move(cp.log_lines);
        for (const auto& l : log_lines)
            log.records.push_back(record_from_json(json::parse(l)));
        out.rewrite_lines("log.jsonl", log_lines);
        std::vector<std::string> timing;
        if (fs::exists(out.path("timing.jsonl"))) {
            std::ifstream tin(out.path("timing.jsonl"));
            std::string line;
            while (std::getline(tin, line) && timing.size() < log_lines.size())
                timing.push_back(line);
        }
        out.rewrite_lines("timing.jsonl", timing);
        resumed = true;
    }

    if (!resumed) {
        for (const char* name : {"log.jsonl", "timing.jsonl", "elites.bin", "best.genome", "checkpoint.bin"})
            fs::remove(out.path(name), ec);
        out.rewrite_lines("log.jsonl", {});
        if (cfg.generations == 0)
            return log;

        auto init_rng = RandomSource::derive(cfg.seed, 0, StreamPurpose::init, 0);
        for (std::size_t i = 0; i < cfg.population; ++i) {
            moea::Individual m{init_genome(cfg.arch, init_rng)};
            m.id = pop.next_id++;
            pop.members.push_back(std::move(m));
        }
        std::vector<std::size_t> all(cfg.population);
        std::iota(all.begin(), all.end(), std::size_t{0});
        moea::evaluate_members(pop.members, all, evaluator, 0, cfg.workers, cfg.env.min_reward());
        moea::assign_rank_and_crowding(pop.members, cfg.policy);
        reevaluate(pop);
        archive_if_improved(pop);
        write_checkpoint();
    }

    const moea::StepConfig step_cfg{cfg.sigma, cfg.seed, cfg.workers, cfg.env.min_reward()};
    while (pop.generation < cfg.generations) {
        const auto t0 = std::chrono::steady_clock::now();
        auto step = moea::generation_step(pop, cfg.policy, evaluator, step_cfg);
        pop = std::move(step.population);
        reevaluate(pop);
        archive_if_improved(pop);

        auto rec = summarize(pop, step.stats, best_so_far);
        const auto line = to_json(rec).dump();
        out.append_line("log.jsonl", line);
        log_lines.push_back(line);
        log.records.push_back(std::move(rec));

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.append_line("timing.jsonl", json{{"generation", pop.generation}, {"wall_clock_s", secs}}.dump());
        if (!opts.quiet) {
            const auto& r = log.records.back();
            std::fprintf(stderr, "gen %llu best %.3f mean %.3f mean_age %.2f best_so_far %.3f (%.2fs)\n",
                         static_cast<unsigned long long>(r.generation), r.best_reward, r.mean_reward, r.mean_age,
                         r.best_so_far, secs);
        }
        for (const auto& f : log.records.back().failures)
            std::fprintf(stderr, "warning: evaluation failed: %s\n", f.c_str());

        if (pop.generation % cfg.checkpoint_interval == 0 || pop.generation == cfg.generations)
            write_checkpoint();
        if (opts.stop_after && opts.stop_after(pop.generation))
            break;
    }
    return log;
}

} // namespace dip
