// dipevo: command-line front end for evolution runs, replays and analysis.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dip/dip.hpp"

namespace fs = std::filesystem;
using namespace dip;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, corrupt = 3, io_error = 4, evaluation = 5 };

struct Overrides {
    std::string config;
    std::optional<std::size_t> population, generations, rollouts, workers, elite_reevaluations, interval;
    std::optional<double> sigma;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy, out;
    bool resume = false;
    bool quiet = false;
};

RunConfig resolve(const Overrides& o)
{
    RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.population)
        c.population = *o.population;
    if (o.generations)
        c.generations = *o.generations;
    if (o.rollouts)
        c.rollouts = *o.rollouts;
    if (o.workers)
        c.workers = *o.workers;
    if (o.elite_reevaluations)
        c.elite_reevaluations = *o.elite_reevaluations;
    if (o.interval)
        c.checkpoint_interval = *o.interval;
    if (o.sigma)
        c.sigma = *o.sigma;
    if (o.seed)
        c.seed = *o.seed;
    if (o.policy)
        c.policy.kind = moea::protection_from_string(*o.policy);
    if (o.out)
        c.output_dir = *o.out;
    c.validate();
    return c;
}

// Writes to `path`, or stdout when it is empty.
template <class F>
void emit(const std::string& path, F&& write)
{
    if (path.empty()) {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path);
    write(out);
    if (!out)
        throw IoError("write failed for " + path);
}

struct GenomeArgs {
    std::string genome;
    std::string config;
    std::uint64_t seed = 0;
};

std::pair<Genome, RunConfig> load_pair(const GenomeArgs& a)
{
    const auto cfg = load_run_config(a.config);
    cfg.arch.validate();
    cfg.env.validate();
    return {deserialize_genome(io::read_file(a.genome), cfg.arch), cfg};
}

void add_genome_args(CLI::App* app, GenomeArgs& a)
{
    app->add_option("--genome", a.genome, "genome file")->required()->check(CLI::ExistingFile);
    app->add_option("--config", a.config, "run config supplying arch and env")->required()->check(CLI::ExistingFile);
    app->add_option("--seed", a.seed, "episode seed");
}

int cmd_count_params(const std::string& preset, const std::string& config)
{
    ArchitectureConfig arch;
    if (!config.empty())
        arch = load_run_config(config).arch;
    else if (preset == "full")
        arch = ArchitectureConfig::full_scale();
    else
        arch = ArchitectureConfig::desk_scale();
    arch.validate();
    for (auto c : kComponents)
        std::cout << to_string(c) << ' ' << count_params(arch, c) << '\n';
    return ok;
}

int cmd_evolve(const Overrides& o)
{
    const auto cfg = resolve(o);
    std::cout << to_json(cfg).dump(2) << std::endl;
    RunOptions opts;
    opts.resume = o.resume;
    opts.quiet = o.quiet;
    const auto log = run_experiment(cfg, opts);
    std::cout << "generations " << log.records.size() << '\n';
    if (!log.archive.empty())
        std::cout << "best_so_far " << log.archive.back().reward << " (generation " << log.archive.back().generation
                  << ", id " << log.archive.back().id << ")\n";
    std::cout << "output " << cfg.output_dir << '\n';
    return ok;
}

int cmd_replay(const GenomeArgs& a, std::size_t episodes, const std::string& dump)
{
    const auto [genome, cfg] = load_pair(a);
    const Agent agent(genome);
    std::vector<double> scores;
    std::ostringstream traces;
    for (std::size_t i = 0; i < episodes; ++i) {
        const auto seed = a.seed + i;
        if (!dump.empty()) {
            auto d = analysis::dump_vectors(genome, cfg.env, seed, fs::path(a.genome).filename().string());
            analysis::write_vector_dump(traces, d);
            double total = 0.0;
            for (const auto& r : d.records)
                total += r.reward;
            scores.push_back(total);
        } else {
            scores.push_back(run_episode(agent, cfg.env, seed).total_reward);
        }
        std::printf("episode %zu seed %llu reward %.6f\n", i, static_cast<unsigned long long>(seed), scores.back());
    }
    double mean = 0.0;
    for (double s : scores)
        mean += s / static_cast<double>(scores.size());
    std::printf("mean %.6f over %zu episodes\n", mean, scores.size());
    if (scores.size() == cfg.env.solved_rollouts)
        std::printf("solved %s (threshold %.6f)\n", envs::solved_check(scores, cfg.env) ? "yes" : "no",
                    cfg.env.effective_solved_threshold());
    if (!dump.empty()) {
        const auto text = traces.str();
        io::write_file(dump, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    return ok;
}

int cmd_saliency(const GenomeArgs& a, std::size_t step, const analysis::SaliencyOptions& opt,
                 const std::string& prefix)
{
    const auto [genome, cfg] = load_pair(a);
    const Agent agent(genome);
    std::optional<StepRecord> at;
    run_episode(agent, cfg.env, a.seed, [&](const StepRecord& r) {
        if (r.t == step)
            at = r;
    });
    if (!at)
        throw ConfigError("episode ended before step " + std::to_string(step));
    const auto map = analysis::saliency_map(agent, at->observation, at->incoming, opt);
    emit(prefix.empty() ? "" : prefix + ".tsv", [&](std::ostream& os) { analysis::write_saliency_grid(os, map); });
    if (!prefix.empty())
        analysis::write_saliency_overlay(prefix + ".ppm", at->observation, map);
    return ok;
}

int cmd_variance(const GenomeArgs& a, const std::string& out)
{
    const auto [genome, cfg] = load_pair(a);
    const auto trace = analysis::activation_variance(analysis::hidden_trace(genome, cfg.env, a.seed));
    emit(out, [&](std::ostream& os) { analysis::write_activation_trace(os, trace); });
    return ok;
}

int cmd_vectors(const GenomeArgs& a, const std::string& out)
{
    const auto [genome, cfg] = load_pair(a);
    const auto d = analysis::dump_vectors(genome, cfg.env, a.seed, fs::path(a.genome).filename().string());
    emit(out, [&](std::ostream& os) { analysis::write_vector_dump(os, d); });
    return ok;
}

int cmd_distances(const std::string& run, const std::string& out)
{
    const auto archive = load_archive(fs::path(run) / "elites.bin");
    if (archive.empty())
        throw CorruptDataError("elite archive in " + run + " is empty");
    const auto rows = analysis::distance_trajectory(archive, archive.back().genome);
    emit(out, [&](std::ostream& os) { analysis::write_distance_table(os, rows); });
    return ok;
}

int cmd_reward_age(const std::vector<std::string>& runs, const std::string& out)
{
    std::vector<std::vector<GenerationRecord>> logs;
    for (const auto& r : runs)
        logs.push_back(read_run_log(fs::path(r) / "log.jsonl"));
    const auto rows = analysis::reward_age_stats(logs);
    std::vector<double> ages, rewards;
    for (const auto& r : rows) {
        ages.push_back(static_cast<double>(r.age));
        rewards.push_back(r.mean_reward);
    }
    emit(out, [&](std::ostream& os) {
        analysis::write_age_table(os, rows);
        if (rows.size() >= 2)
            os << "# spearman " << std::setprecision(17) << analysis::spearman(ages, rewards) << '\n';
    });
    return ok;
}

// Built-in subset of the oracle and golden checks.
int cmd_verify()
{
    int failed = 0;
    auto report = [&](const char* name, bool pass, const std::string& detail) {
        std::printf("%s %s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
        failed += pass ? 0 : 1;
    };
    const auto full = ArchitectureConfig::full_scale();
    report("param-count-visual", count_params(full, Component::visual) == 755744,
           std::to_string(count_params(full, Component::visual)));
    report("param-count-controller", count_params(full, Component::controller) == 867,
           std::to_string(count_params(full, Component::controller)));

    // 6x6 ramp through a 2x2 stride-2 kernel [1,2,3,4] with bias 0.5
    Image ramp(1, 6, 6);
    for (std::size_t i = 0; i < 36; ++i)
        ramp.data[i] = static_cast<double>(i);
    const std::vector<double> w{1, 2, 3, 4, 0.5};
    const auto conv = nn::conv2d_forward(ramp, w, {"ramp", nn::LayerKind::conv, 1, 1, 2, 2, nn::Activation::identity});
    const std::vector<double> expected{48.5, 68.5, 88.5, 168.5, 188.5, 208.5, 288.5, 308.5, 328.5};
    report("conv-ramp", conv.data == expected, "");

    const std::vector<double> x{0.3, -0.2}, h{0.1}, c{0.8};
    const auto cell = nn::lstm_cell_forward(x, h, c, std::vector<double>(nn::lstm_param_count(2, 1), 0.0));
    report("lstm-zero-weights", cell.c[0] == 0.4 && std::abs(cell.h[0] - 0.5 * std::tanh(0.4)) < 1e-15, "");

    using moea::Individual;
    RandomSource rng(1);
    ArchitectureConfig tiny;
    tiny.image_size = 4;
    tiny.channels = {1};
    tiny.z_dim = tiny.hidden_dim = 1;
    const auto g = init_genome(tiny, rng);
    std::vector<Individual> front;
    const std::pair<std::uint64_t, double> pts[] = {{0, 0}, {1, 4}, {3, 5}, {6, 9}, {10, 10}};
    for (const auto& [age, reward] : pts) {
        Individual m{g};
        m.age = age;
        m.reward = reward;
        front.push_back(m);
    }
    const auto fronts = moea::nondominated_sort(front);
    const auto d = moea::crowding_distance(fronts.at(0), front);
    report("crowding-five-points",
           fronts.size() == 1 && std::isinf(d[0]) && std::abs(d[1] - 0.8) < 1e-12 && std::abs(d[2] - 1.0) < 1e-12 &&
               std::abs(d[3] - 1.2) < 1e-12 && std::isinf(d[4]),
           "");

    const auto dodge = golden::rollout_checksum(envs::EnvConfig{}, 1, 300);
    const auto track = golden::rollout_checksum(envs::EnvConfig::desk_scale_track(), 1, 300);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(dodge));
    report("golden-dodge-frames", dodge == golden::kDodgeSeed1, buf);
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(track));
    report("golden-track-frames", track == golden::kTrackSeed1, buf);

    const auto bytes = serialize_genome(g);
    report("genome-roundtrip", deserialize_genome(bytes) == g, std::to_string(bytes.size()) + " bytes");

    envs::EnvConfig desk;
    report("desk-solved-threshold", std::abs(desk.effective_solved_threshold() - 750.0 * 300.0 / 2100.0) < 1e-12,
           std::to_string(desk.effective_solved_threshold()));
    return failed == 0 ? ok : failure;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Neuroevolution with component-wise innovation protection"};
    app.require_subcommand(1);

    auto* count = app.add_subcommand("count-params", "print per-component parameter counts");
    std::string preset = "desk", count_config;
    count->add_option("--preset", preset, "architecture preset")->check(CLI::IsMember({"desk", "full"}));
    count->add_option("--config", count_config, "take the architecture from a run config")
        ->check(CLI::ExistingFile);

    auto* evolve = app.add_subcommand("evolve", "run or resume an experiment");
    Overrides ov;
    evolve->add_option("--config", ov.config, "run config (JSON)")->check(CLI::ExistingFile);
    evolve->add_option("--population", ov.population);
    evolve->add_option("--generations", ov.generations);
    evolve->add_option("--sigma", ov.sigma);
    evolve->add_option("--seed", ov.seed);
    evolve->add_option("--rollouts", ov.rollouts);
    evolve->add_option("--elite-reevaluations", ov.elite_reevaluations);
    evolve->add_option("--checkpoint-interval", ov.interval);
    evolve->add_option("--policy", ov.policy, "dip | controller-protect | memory-and-controller-protect | random-age | none");
    evolve->add_option("--workers", ov.workers)->envname("DIP_WORKERS");
    evolve->add_option("--out", ov.out, "output directory")->envname("DIP_OUTPUT_DIR");
    evolve->add_flag("--resume", ov.resume, "continue from the checkpoint in the output directory");
    evolve->add_flag("--quiet", ov.quiet, "no per-generation progress on stderr");

    auto* replay = app.add_subcommand("replay", "run a saved genome");
    GenomeArgs rep;
    std::size_t episodes = 1;
    std::string dump;
    add_genome_args(replay, rep);
    replay->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
    replay->add_option("--dump-traces", dump, "write per-frame z/h/action traces here");

    auto* analyze = app.add_subcommand("analyze", "analysis on genomes and run logs");
    analyze->require_subcommand(1);
    std::string out;

    auto* sal = analyze->add_subcommand("saliency", "perturbation saliency at one frame");
    GenomeArgs sal_args;
    std::size_t step = 0;
    analysis::SaliencyOptions sal_opt;
    std::string prefix;
    add_genome_args(sal, sal_args);
    sal->add_option("--step", step, "frame index");
    sal->add_option("--blur", sal_opt.blur_size, "blur patch size (odd)");
    sal->add_option("--blur-sigma", sal_opt.blur_sigma);
    sal->add_option("--stride", sal_opt.stride);
    sal->add_option("--out", prefix, "write <prefix>.tsv and <prefix>.ppm");

    auto* var = analyze->add_subcommand("variance", "hidden-state activation variance trace");
    GenomeArgs var_args;
    add_genome_args(var, var_args);
    var->add_option("--out", out);

    auto* vec = analyze->add_subcommand("vectors", "per-frame z, h and action table");
    GenomeArgs vec_args;
    add_genome_args(vec, vec_args);
    vec->add_option("--out", out);

    auto* dist = analyze->add_subcommand("distances", "archive weight distances to the final elite");
    std::string run_dir;
    dist->add_option("--run", run_dir, "run output directory")->required()->check(CLI::ExistingDirectory);
    dist->add_option("--out", out);

    auto* age = analyze->add_subcommand("reward-age", "mean reward per age over runs");
    std::vector<std::string> runs;
    age->add_option("--runs", runs, "run output directories")->required()->check(CLI::ExistingDirectory);
    age->add_option("--out", out);

    auto* verify = app.add_subcommand("verify", "built-in oracle and golden checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*count)
            return cmd_count_params(preset, count_config);
        if (*evolve)
            return cmd_evolve(ov);
        if (*replay)
            return cmd_replay(rep, episodes, dump);
        if (*sal)
            return cmd_saliency(sal_args, step, sal_opt, prefix);
        if (*var)
            return cmd_variance(var_args, out);
        if (*vec)
            return cmd_vectors(vec_args, out);
        if (*dist)
            return cmd_distances(run_dir, out);
        if (*age)
            return cmd_reward_age(runs, out);
        if (*verify)
            return cmd_verify();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return config_error;
    } catch (const CorruptDataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return corrupt;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return io_error;
    } catch (const EvaluationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return evaluation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return failure;
    }
    return failure;
}
