// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: dip_acceptance [--out DIR] [--only N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>

#include "dip/dip.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dip;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    bool soft;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// 1 ---------------------------------------------------------------------------

Outcome param_counts()
{
    const auto a = ArchitectureConfig::full_scale();
    const auto v = count_params(a, Component::visual);
    const auto m = count_params(a, Component::memory);
    const auto c = count_params(a, Component::controller);
    return {v == 755744 && c == 867, fmt("visual=%zu memory=%zu controller=%zu", v, m, c)};
}

// 2 ---------------------------------------------------------------------------

Outcome nsga_oracle()
{
    RandomSource rng(2002);
    std::size_t mismatched = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 30));
        std::vector<moea::BasicIndividual<int>> members;
        std::vector<oracle::Point> pts;
        for (std::size_t i = 0; i < n; ++i) {
            moea::BasicIndividual<int> m{0};
            m.age = static_cast<std::uint64_t>(rng.uniform_int(0, 8));
            m.reward = trial % 3 == 0 ? static_cast<double>(rng.uniform_int(0, 5)) : rng.uniform(-100.0, 300.0);
            pts.push_back({static_cast<double>(m.age), *m.reward});
            members.push_back(m);
        }
        const auto fronts = moea::nondominated_sort(members);
        if (fronts != oracle::brute_fronts(pts)) {
            ++mismatched;
            continue;
        }
        for (const auto& f : fronts) {
            const auto d = moea::crowding_distance(f, members);
            std::vector<oracle::Point> fp;
            for (auto i : f)
                fp.push_back(pts[i]);
            const auto e = oracle::crowding(fp);
            for (std::size_t k = 0; k < f.size(); ++k) {
                if (std::isinf(e[k]) || std::isinf(d[k])) {
                    if (std::isinf(e[k]) != std::isinf(d[k]))
                        worst = INFINITY;
                    continue;
                }
                worst = std::max(worst, std::abs(e[k] - d[k]));
            }
        }
    }
    return {mismatched == 0 && worst <= 1e-9,
            fmt("200 populations, sort mismatches=%zu, max crowding error=%.3g (tol 1e-9)", mismatched, worst)};
}

// 3 ---------------------------------------------------------------------------

Outcome layer_oracles()
{
    RandomSource rng(3003);
    double conv_err = 0.0, lin_err = 0.0, lstm_err = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto C = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto O = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const auto K = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto S = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto H = static_cast<std::size_t>(rng.uniform_int(K, 12));
        const auto W = static_cast<std::size_t>(rng.uniform_int(K, 12));
        Image in(C, H, W);
        std::vector<std::vector<std::vector<double>>> nin(C, std::vector<std::vector<double>>(H, std::vector<double>(W)));
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    nin[c][y][x] = in.at(c, y, x) = rng.uniform(-1, 1);
        std::vector<double> w(nn::conv_param_count(C, O, K));
        for (auto& v : w)
            v = rng.uniform(-1, 1);
        std::vector<std::vector<std::vector<std::vector<double>>>> nw(
            O, std::vector<std::vector<std::vector<double>>>(C, std::vector<std::vector<double>>(K, std::vector<double>(K))));
        std::size_t p = 0;
        for (auto& o : nw)
            for (auto& c : o)
                for (auto& r : c)
                    for (auto& v : r)
                        v = w[p++];
        std::vector<double> b(w.begin() + static_cast<std::ptrdiff_t>(p), w.end());
        const bool relu = rng.bernoulli(0.5);
        const auto out = nn::conv2d_forward(
            in, w, {"c", nn::LayerKind::conv, C, O, K, S, relu ? nn::Activation::relu : nn::Activation::identity});
        const auto ref = oracle::conv(nin, nw, b, static_cast<int>(S), relu);
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < out.height; ++y)
                for (std::size_t x = 0; x < out.width; ++x)
                    conv_err = std::max(conv_err, std::abs(out.at(o, y, x) - ref[o][y][x]));
        if (out.height != ref[0].size() || out.width != ref[0][0].size())
            conv_err = INFINITY;

        // linear
        const auto nI = static_cast<std::size_t>(rng.uniform_int(1, 20));
        const auto nO = static_cast<std::size_t>(rng.uniform_int(1, 10));
        std::vector<double> lw(nn::linear_param_count(nI, nO)), x(nI);
        for (auto& v : lw)
            v = rng.uniform(-1, 1);
        for (auto& v : x)
            v = rng.uniform(-2, 2);
        std::vector<std::vector<double>> M(nO, std::vector<double>(nI));
        std::vector<double> lb(nO);
        for (std::size_t j = 0; j < nO; ++j) {
            for (std::size_t i = 0; i < nI; ++i)
                M[j][i] = lw[j * nI + i];
            lb[j] = lw[nO * nI + j];
        }
        lin_err = std::max(lin_err, max_abs_diff(nn::linear_forward(x, lw, {"l", nn::LayerKind::linear, nI, nO}),
                                                 oracle::matvec(M, lb, x)));

        // lstm over a short sequence
        const auto In = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto Hd = static_cast<std::size_t>(rng.uniform_int(1, 6));
        std::vector<double> sw(nn::lstm_param_count(In, Hd));
        for (auto& v : sw)
            v = rng.uniform(-1, 1);
        oracle::ScalarLstm ref_cell;
        ref_cell.wx.assign(4, std::vector<std::vector<double>>(Hd, std::vector<double>(In)));
        ref_cell.wh.assign(4, std::vector<std::vector<double>>(Hd, std::vector<double>(Hd)));
        ref_cell.b.assign(4, std::vector<double>(Hd));
        for (std::size_t g = 0; g < 4; ++g)
            for (std::size_t u = 0; u < Hd; ++u) {
                const auto row = g * Hd + u;
                for (std::size_t i = 0; i < In; ++i)
                    ref_cell.wx[g][u][i] = sw[row * (In + Hd) + i];
                for (std::size_t k = 0; k < Hd; ++k)
                    ref_cell.wh[g][u][k] = sw[row * (In + Hd) + In + k];
                ref_cell.b[g][u] = sw[4 * Hd * (In + Hd) + row];
            }
        std::vector<double> h(Hd, 0.0), c(Hd, 0.0), rh(Hd, 0.0), rc(Hd, 0.0);
        for (int t = 0; t < 5; ++t) {
            std::vector<double> xi(In);
            for (auto& v : xi)
                v = rng.uniform(-2, 2);
            auto next = nn::lstm_cell_forward(xi, h, c, sw);
            h = next.h;
            c = next.c;
            ref_cell.step(xi, rh, rc);
            lstm_err = std::max({lstm_err, max_abs_diff(h, rh), max_abs_diff(c, rc)});
        }
    }
    const double tol = 1e-10;
    return {conv_err <= tol && lin_err <= tol && lstm_err <= tol,
            fmt("100 trials each, max error conv=%.3g linear=%.3g lstm=%.3g (tol 1e-10)", conv_err, lin_err, lstm_err)};
}

// 4 ---------------------------------------------------------------------------

Outcome mutation_stats()
{
    ArchitectureConfig a;
    a.image_size = 4;
    a.channels = {1};
    a.z_dim = a.hidden_dim = 1;
    RandomSource init(4);
    const auto g = init_genome(a, init);
    RandomSource rng(4004);
    const int N = 30000;
    const double sigma = 0.03;
    std::array<double, 3> counts{};
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (int i = 0; i < N; ++i) {
        auto [child, ev] = mutate(g, sigma, rng);
        counts[static_cast<std::size_t>(ev.component)] += 1;
        const auto x = child.segment(ev.component);
        const auto y = g.segment(ev.component);
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double d = x[k] - y[k];
            sum += d;
            sum2 += d * d;
            ++n;
        }
    }
    double chi2 = 0.0;
    for (double c : counts)
        chi2 += (c - N / 3.0) * (c - N / 3.0) / (N / 3.0);
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    const bool uniform = chi2 < 9.210;  // df 2 at the 1% level
    const bool sd_ok = std::abs(sd / sigma - 1.0) < 0.05;
    const bool mean_ok = std::abs(mean) < 0.05 * sigma;
    return {uniform && sd_ok && mean_ok,
            fmt("chi2=%.3f (crit 9.210), counts=%.0f/%.0f/%.0f, noise mean=%.3g sd=%.5f (target 0.03 +-5%%)", chi2,
                counts[0], counts[1], counts[2], mean, sd)};
}

// 5 ---------------------------------------------------------------------------

Outcome age_bookkeeping()
{
    const std::pair<moea::ProtectionKind, oracle::Policy> policies[] = {
        {moea::ProtectionKind::dip, oracle::Policy::dip},
        {moea::ProtectionKind::controller_protect, oracle::Policy::controller},
        {moea::ProtectionKind::memory_and_controller_protect, oracle::Policy::memory_controller},
        {moea::ProtectionKind::random_age, oracle::Policy::random_age},
        {moea::ProtectionKind::none, oracle::Policy::none}};
    std::size_t traces = 0, wrong = 0;
    for (std::size_t len = 0; len <= 6; ++len) {
        std::size_t total = 1;
        for (std::size_t i = 0; i < len; ++i)
            total *= 3;
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<oracle::Event> events;
            std::vector<Component> comps;
            for (std::size_t i = 0, c = code; i < len; ++i, c /= 3) {
                events.push_back(static_cast<oracle::Event>(c % 3));
                comps.push_back(static_cast<Component>(c % 3));
            }
            for (const auto& [kind, ref_kind] : policies) {
                const std::uint64_t seed = 1000 * len + code;
                RandomSource draws(seed);
                const auto expected = oracle::lineage_ages(
                    ref_kind, events, [&] { return static_cast<std::uint64_t>(draws.uniform_int(0, 20)); });
                RandomSource rng(seed);
                std::vector<moea::BasicIndividual<int>> line{moea::BasicIndividual<int>{0}};
                for (std::size_t i = 0; i < len; ++i) {
                    moea::increment_ages(line);
                    auto child = line.back();
                    moea::apply_protection(MutationEvent{comps[i], 0.03}, child, moea::ProtectionPolicy{kind}, rng);
                    if (child.age != expected[i])
                        ++wrong;
                    line = {child};
                }
                ++traces;
            }
        }
    }
    return {wrong == 0, fmt("%zu traces over 5 policies, %zu age mismatches", traces, wrong)};
}

// 6 ---------------------------------------------------------------------------

std::uint64_t digest(const fs::path& p) { return io::fnv1a64(io::read_file(p)); }

Outcome determinism(const fs::path& root)
{
    RunConfig c;
    c.population = 16;
    c.generations = 10;
    c.sigma = 0.1;
    c.seed = 6006;
    c.workers = std::max(1u, std::thread::hardware_concurrency());
    auto at = [&](const char* name) {
        auto x = c;
        x.output_dir = (root / name).string();
        fs::remove_all(x.output_dir);
        return x;
    };
    run_experiment(at("c6_a"));
    auto serial = at("c6_b");
    serial.workers = 1;
    run_experiment(serial);
    RunOptions stop;
    stop.stop_after = [](std::uint64_t g) { return g == 4; };
    const auto cut = at("c6_cut");
    run_experiment(cut, stop);
    RunOptions resume;
    resume.resume = true;
    run_experiment(cut, resume);

    const bool replay = digest(root / "c6_a/log.jsonl") == digest(root / "c6_b/log.jsonl") &&
                        digest(root / "c6_a/elites.bin") == digest(root / "c6_b/elites.bin");
    const bool resumed = digest(root / "c6_a/log.jsonl") == digest(root / "c6_cut/log.jsonl") &&
                         digest(root / "c6_a/elites.bin") == digest(root / "c6_cut/elites.bin");
    return {replay && resumed, fmt("N=16, 10 generations: replay %s, interrupt@4+resume %s",
                                   replay ? "identical" : "DIFFERS", resumed ? "identical" : "DIFFERS")};
}

// 7 and 9 -----------------------------------------------------------------------

struct TreatmentResult {
    std::vector<double> elite_scores;  // 20-rollout mean of each run's final elite
    std::vector<double> stored_best;   // best-so-far reward recorded by the run
    std::size_t solved = 0;
    std::vector<std::vector<GenerationRecord>> logs;
};

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const auto m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

const std::uint64_t kSeparationSeeds[] = {101, 102, 103, 104, 105, 106, 107, 108, 109, 110};

TreatmentResult run_treatment(const fs::path& root, moea::ProtectionKind kind, std::FILE* report)
{
    TreatmentResult out;
    for (auto seed : kSeparationSeeds) {
        RunConfig c;
        c.population = 32;
        c.generations = 60;
        c.sigma = 0.1;
        c.seed = seed;
        c.policy.kind = kind;
        c.workers = std::max(1u, std::thread::hardware_concurrency());
        c.output_dir = (root / fmt("c7_%s_%llu", moea::to_string(kind), static_cast<unsigned long long>(seed))).string();
        fs::remove_all(c.output_dir);
        const auto log = run_experiment(c);
        const auto& elite = log.archive.back();
        auto rng = RandomSource::derive(seed, 0, StreamPurpose::solved_check, 0);
        std::vector<double> scores;
        const Agent agent(elite.genome);
        for (std::size_t i = 0; i < c.env.solved_rollouts; ++i)
            scores.push_back(run_episode(agent, c.env, rng.next_u64()).total_reward);
        double mean = 0.0;
        for (double s : scores)
            mean += s / static_cast<double>(scores.size());
        const bool solved = envs::solved_check(scores, c.env);
        out.elite_scores.push_back(mean);
        out.stored_best.push_back(elite.reward);
        out.solved += solved ? 1 : 0;
        out.logs.push_back(log.records);
        std::fprintf(report, "%s\t%llu\t%.6f\t%.6f\t%d\n", moea::to_string(kind), static_cast<unsigned long long>(seed),
                     elite.reward, mean, solved ? 1 : 0);
        std::fflush(report);
    }
    return out;
}

struct Separation {
    TreatmentResult dip, none;
    bool ran = false;
};

Separation& separation(const fs::path& root)
{
    static Separation s;
    if (!s.ran) {
        std::FILE* report = std::fopen((root / "separation.tsv").c_str(), "w");
        if (!report)
            throw IoError("cannot write " + (root / "separation.tsv").string());
        std::fprintf(report, "policy\tseed\tstored_best\telite_mean_20\tsolved\n");
        s.dip = run_treatment(root, moea::ProtectionKind::dip, report);
        s.none = run_treatment(root, moea::ProtectionKind::none, report);
        std::fclose(report);
        s.ran = true;
    }
    return s;
}

Outcome treatment_separation(const fs::path& root)
{
    const auto& s = separation(root);
    const double md = median(s.dip.elite_scores);
    const double mn = median(s.none.elite_scores);
    const bool pass = md >= mn && s.dip.solved >= s.none.solved;
    return {pass, fmt("median elite (20 rollouts) dip=%.2f none=%.2f; solved (>%.3f) dip=%zu/10 none=%zu/10; "
                      "stored-best medians dip=%.2f none=%.2f; seeds 101-110",
                      md, mn, envs::EnvConfig{}.effective_solved_threshold(), s.dip.solved, s.none.solved,
                      median(s.dip.stored_best), median(s.none.stored_best))};
}

Outcome reward_age(const fs::path& root)
{
    const auto& s = separation(root);
    const auto rows = analysis::reward_age_stats(s.dip.logs);
    std::vector<double> ages, rewards;
    for (const auto& r : rows) {
        ages.push_back(static_cast<double>(r.age));
        rewards.push_back(r.mean_reward);
    }
    std::ofstream table(root / "reward_age.tsv");
    analysis::write_age_table(table, rows);
    if (rows.size() < 2)
        return {false, "fewer than two age buckets"};
    const double rho = analysis::spearman(ages, rewards);
    return {rho > 0.0, fmt("spearman(age, mean reward) = %.4f over %zu age buckets", rho, rows.size())};
}

// 8 ---------------------------------------------------------------------------

Outcome saliency_cases()
{
    RandomSource rng(8008);
    const auto desk = ArchitectureConfig::desk_scale();
    bool zeros_ok = true;
    for (int k = 0; k < 5; ++k) {
        const auto g = init_genome(desk, rng);
        const Image flat(3, 16, 16, rng.uniform01());
        for (double v : analysis::saliency_map(g, flat, AgentState::initial(desk)).values)
            zeros_ok = zeros_ok && v == 0.0;
        const auto z = g.with_segment(Component::controller,
                                      std::vector<double>(count_params(desk, Component::controller), 0.0));
        Image noise(3, 16, 16);
        for (auto& v : noise.data)
            v = rng.uniform01();
        for (double v : analysis::saliency_map(z, noise, AgentState::initial(desk)).values)
            zeros_ok = zeros_ok && v == 0.0;
    }

    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        ArchitectureConfig a;
        a.image_size = 8;
        a.channels = {static_cast<std::size_t>(rng.uniform_int(1, 3))};
        a.z_dim = static_cast<std::size_t>(rng.uniform_int(1, 4));
        a.hidden_dim = static_cast<std::size_t>(rng.uniform_int(1, 4));
        a.action_dim = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto g = init_genome(a, rng);
        Image obs(3, 8, 8);
        for (auto& v : obs.data)
            v = rng.uniform01();
        auto state = AgentState::initial(a);
        for (auto& v : state.h)
            v = rng.uniform(-0.5, 0.5);
        const analysis::SaliencyOptions opt{5, 5.0 / 3.0, 1};
        const auto map = analysis::saliency_map(g, obs, state, opt);
        const auto base = agent_step(g, state, obs).first;
        const auto blurred = analysis::gaussian_blur(obs, 5, 5.0 / 3.0);
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                Image pert = obs;
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t yy = 0; yy < 8; ++yy)
                        for (std::size_t xx = 0; xx < 8; ++xx)
                            if (std::abs(static_cast<int>(yy) - static_cast<int>(y)) <= 2 &&
                                std::abs(static_cast<int>(xx) - static_cast<int>(x)) <= 2)
                                pert.at(c, yy, xx) = blurred.at(c, yy, xx);
                const auto moved = agent_step(g, state, pert).first;
                double l1 = 0.0;
                for (std::size_t k = 0; k < base.size(); ++k)
                    l1 += std::abs(base[k] - moved[k]);
                worst = std::max(worst, std::abs(l1 - map.at(y, x)));
            }
    }
    return {zeros_ok && worst <= 1e-12,
            fmt("zero cases %s; 50 toy genomes two-pass max error %.3g", zeros_ok ? "exact" : "NONZERO", worst)};
}

} // namespace

int main(int argc, char** argv)
{
    fs::path out = fs::temp_directory_path() / "dip_acceptance";
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--out") && i + 1 < argc)
            out = argv[++i];
        else if (!std::strcmp(argv[i], "--only") && i + 1 < argc)
            only = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: dip_acceptance [--out DIR] [--only N]\n");
            return 2;
        }
    }
    fs::create_directories(out);

    const std::vector<Criterion> criteria{
        {1, "parameter-counts", false, param_counts},
        {2, "nsga2-oracle", false, nsga_oracle},
        {3, "layer-oracles", false, layer_oracles},
        {4, "mutation-statistics", false, mutation_stats},
        {5, "age-bookkeeping", false, age_bookkeeping},
        {6, "determinism-resume", false, [&] { return determinism(out); }},
        {7, "treatment-separation", true, [&] { return treatment_separation(out); }},
        {8, "saliency-zero-cases", false, saliency_cases},
        {9, "reward-age-direction", true, [&] { return reward_age(out); }},
    };

    int hard_failures = 0;
    for (const auto& c : criteria) {
        if (only && c.id != only && !(only == 9 && c.id == 7))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %d %s%s: %s [%.2fs]\n", r.pass ? "PASS" : "FAIL", c.id, c.name, c.soft ? " (directional)" : "",
                    r.detail.c_str(), secs);
        std::fflush(stdout);
        if (!r.pass && !c.soft)
            ++hard_failures;
    }
    return hard_failures == 0 ? 0 : 1;
}
