#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "dip/analysis.hpp"

using namespace dip;
using namespace dip::analysis;
using Catch::Matchers::WithinAbs;

namespace {

Image noise_image(const ArchitectureConfig& a, RandomSource& rng)
{
    Image img(a.image_channels, a.image_size, a.image_size);
    for (auto& v : img.data)
        v = rng.uniform01();
    return img;
}

ArchitectureConfig toy_arch(RandomSource& rng)
{
    ArchitectureConfig a;
    a.image_size = 8;
    a.channels = {static_cast<std::size_t>(rng.uniform_int(1, 3))};
    a.z_dim = static_cast<std::size_t>(rng.uniform_int(1, 4));
    a.hidden_dim = static_cast<std::size_t>(rng.uniform_int(1, 4));
    a.action_dim = static_cast<std::size_t>(rng.uniform_int(1, 3));
    return a;
}

// Blur written out directly: full kernel, weights renormalized over in-bounds taps.
double blurred_pixel(const Image& img, std::size_t c, std::size_t y, std::size_t x, int r, double sigma)
{
    double acc = 0.0, norm = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int yy = static_cast<int>(y) + dy;
            const int xx = static_cast<int>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<int>(img.height) || xx >= static_cast<int>(img.width))
                continue;
            const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            acc += w * img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            norm += w;
        }
    return acc / norm;
}

} // namespace

TEST_CASE("blur keeps constants and is renormalized at the border")
{
    Image flat(3, 6, 6, 0.4);
    const auto b = gaussian_blur(flat, 5, 5.0 / 3.0);
    for (double v : b.data)
        CHECK_THAT(v, WithinAbs(0.4, 1e-14));
    RandomSource rng(1);
    Image img(1, 7, 5);
    for (auto& v : img.data)
        v = rng.uniform01();
    const auto g = gaussian_blur(img, 5, 1.2);
    for (std::size_t y = 0; y < 7; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            CHECK_THAT(g.at(0, y, x), WithinAbs(blurred_pixel(img, 0, y, x, 2, 1.2), 1e-12));
    CHECK_THROWS_AS(gaussian_blur(img, 4, 1.0), ConfigError);
    CHECK_THROWS_AS(gaussian_blur(img, 3, 0.0), ConfigError);
}

TEST_CASE("saliency is zero on a uniform observation")
{
    const auto arch = ArchitectureConfig::desk_scale();
    RandomSource rng(2);
    const auto g = init_genome(arch, rng);
    const Image obs(3, 16, 16, 0.3);
    const auto m = saliency_map(g, obs, AgentState::initial(arch));
    CHECK(m.height == 16);
    for (double v : m.values)
        CHECK(v == 0.0);
}

TEST_CASE("saliency is zero for a zero controller")
{
    const auto arch = ArchitectureConfig::desk_scale();
    RandomSource rng(3);
    auto g = init_genome(arch, rng);
    g = g.with_segment(Component::controller, std::vector<double>(count_params(arch, Component::controller), 0.0));
    const auto m = saliency_map(g, noise_image(arch, rng), AgentState::initial(arch));
    for (double v : m.values)
        CHECK(v == 0.0);
}

TEST_CASE("saliency matches the two-pass oracle on random toy genomes")
{
    RandomSource rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto arch = toy_arch(rng);
        const auto g = init_genome(arch, rng);
        const auto obs = noise_image(arch, rng);
        auto state = AgentState::initial(arch);
        for (auto& v : state.h)
            v = rng.uniform(-0.5, 0.5);
        for (auto& v : state.c)
            v = rng.uniform(-0.5, 0.5);
        const SaliencyOptions opt{3, 1.0, 1};
        const auto m = saliency_map(g, obs, state, opt);

        const auto base = agent_step(g, state, obs).first;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto y = static_cast<std::size_t>(rng.uniform_int(0, 7));
            const auto x = static_cast<std::size_t>(rng.uniform_int(0, 7));
            Image pert = obs;
            for (std::size_t c = 0; c < 3; ++c)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = static_cast<int>(y) + dy;
                        const int xx = static_cast<int>(x) + dx;
                        if (yy < 0 || xx < 0 || yy > 7 || xx > 7)
                            continue;
                        pert.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) =
                            blurred_pixel(obs, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 1, 1.0);
                    }
            const auto moved = agent_step(g, state, pert).first;
            double l1 = 0.0;
            for (std::size_t k = 0; k < base.size(); ++k)
                l1 += std::abs(base[k] - moved[k]);
            CHECK_THAT(m.at(y, x), WithinAbs(l1, 1e-12));
        }
    }
}

TEST_CASE("saliency vanishes outside the encoder's receptive field")
{
    // 16px through two k4 s2 convs reads input rows and columns 0..13 only.
    const auto arch = ArchitectureConfig::desk_scale();
    RandomSource rng(5);
    const auto g = init_genome(arch, rng);
    const auto obs = noise_image(arch, rng);
    const auto m = saliency_map(g, obs, AgentState::initial(arch), SaliencyOptions{3, 1.0, 1});
    double inside = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            if (y == 15 || x == 15)
                CHECK(m.at(y, x) == 0.0);
            else
                inside = std::max(inside, m.at(y, x));
        }
    CHECK(inside > 0.0);
}

TEST_CASE("saliency stride fills blocks")
{
    const auto arch = ArchitectureConfig::desk_scale();
    RandomSource rng(6);
    const auto g = init_genome(arch, rng);
    const auto obs = noise_image(arch, rng);
    const auto full = saliency_map(g, obs, AgentState::initial(arch));
    const auto coarse = saliency_map(g, obs, AgentState::initial(arch), SaliencyOptions{5, 5.0 / 3.0, 4});
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            CHECK(coarse.at(y, x) == full.at(y / 4 * 4, x / 4 * 4));
    CHECK_THROWS_AS(saliency_map(g, obs, AgentState::initial(arch), SaliencyOptions{17, 1.0, 1}), ConfigError);
}

TEST_CASE("activation variance")
{
    SECTION("constant hidden states give zeros")
    {
        const auto t = activation_variance({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
        for (double v : t.raw)
            CHECK(v == 0.0);
        for (double v : t.normalized)
            CHECK(v == 0.0);
    }
    SECTION("hand-computed three steps")
    {
        // step means 2, 2, 0; episode mean 4/3
        const auto t = activation_variance({{1, 3}, {2, 2}, {0, 0}});
        CHECK_THAT(t.episode_mean, WithinAbs(4.0 / 3.0, 1e-15));
        CHECK_THAT(t.raw[0], WithinAbs(4.0 / 9.0, 1e-15));
        CHECK_THAT(t.raw[2], WithinAbs(16.0 / 9.0, 1e-15));
        CHECK(t.normalized == std::vector<double>{0.0, 0.0, 1.0});
    }
    SECTION("ten random steps against a direct computation")
    {
        RandomSource rng(7);
        std::vector<std::vector<double>> hs(10, std::vector<double>(4));
        for (auto& h : hs)
            for (auto& v : h)
                v = rng.uniform(-1, 1);
        const auto t = activation_variance(hs);
        std::vector<double> means;
        double em = 0.0;
        for (const auto& h : hs) {
            means.push_back((h[0] + h[1] + h[2] + h[3]) / 4.0);
            em += means.back() / 10.0;
        }
        std::vector<double> raw;
        for (double m : means)
            raw.push_back((m - em) * (m - em));
        const double lo = *std::min_element(raw.begin(), raw.end());
        const double hi = *std::max_element(raw.begin(), raw.end());
        for (std::size_t i = 0; i < 10; ++i) {
            CHECK_THAT(t.raw[i], WithinAbs(raw[i], 1e-12));
            CHECK_THAT(t.normalized[i], WithinAbs((raw[i] - lo) / (hi - lo), 1e-12));
        }
    }
    CHECK_THROWS_AS(activation_variance({}), ConfigError);
}

TEST_CASE("distance trajectory ends at zero for the final genome")
{
    RandomSource rng(8);
    const auto arch = ArchitectureConfig::desk_scale();
    const auto g0 = init_genome(arch, rng);
    auto seg = std::vector<double>(g0.segment(Component::memory).begin(), g0.segment(Component::memory).end());
    seg[0] += 2.0;
    const auto g1 = g0.with_segment(Component::memory, seg);
    std::vector<ArchiveEntry> archive{{0, 1, 10.0, 0, 0.0, g0}, {3, 7, 20.0, 2, 1.5, g1}};
    const auto rows = distance_trajectory(archive, g1);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].distance[0] == 0.0);
    CHECK_THAT(rows[0].distance[1], WithinAbs(2.0, 1e-12));
    CHECK(rows[0].distance[2] == 0.0);
    CHECK(rows[1].distance == std::array<double, 3>{0.0, 0.0, 0.0});
    CHECK(rows[1].population_mean_age == 1.5);
    CHECK_THROWS_AS(distance_trajectory({}, g1), ConfigError);
}

TEST_CASE("reward by age pools every member")
{
    GenerationRecord a, b;
    a.members = {{1, 0, 2.0}, {2, 1, 4.0}, {3, 1, 6.0}};
    b.members = {{4, 0, 4.0}, {5, 3, 9.0}};
    const auto rows = reward_age_stats({{a}, {b}});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].age == 0);
    CHECK(rows[0].mean_reward == 3.0);
    CHECK(rows[0].count == 2);
    CHECK(rows[1].mean_reward == 5.0);
    CHECK(rows[2].age == 3);
    CHECK(rows[2].count == 1);
}

TEST_CASE("spearman rank correlation")
{
    const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, r{4, 3, 2, 1};
    CHECK_THAT(spearman(x, y), WithinAbs(1.0, 1e-15));
    CHECK_THAT(spearman(x, r), WithinAbs(-1.0, 1e-15));
    // ties take average ranks: 4.5 / sqrt(4.5 * 5)
    const std::vector<double> tx{1, 2, 2, 3}, ty{1, 3, 2, 4};
    CHECK_THAT(spearman(tx, ty), WithinAbs(0.9486832980505138, 1e-12));
    CHECK(average_ranks(tx) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    const std::vector<double> flat{2, 2, 2, 2};
    CHECK(std::isnan(spearman(x, flat)));
    CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), ConfigError);
}

TEST_CASE("vector dumps")
{
    envs::EnvConfig env;
    env.max_steps = 50;
    env.dodge.spawn_rate = 0.0;
    RandomSource rng(9);
    const auto arch = ArchitectureConfig::desk_scale();
    const auto g = init_genome(arch, rng);
    const auto d = dump_vectors(g, env, 17, "best");
    REQUIRE(d.records.size() == 50);
    for (const auto& r : d.records) {
        CHECK(r.z.size() == arch.z_dim);
        CHECK(r.h.size() == arch.hidden_dim);
        CHECK(r.action.size() == arch.action_dim);
    }
    CHECK(dump_vectors(g, env, 17, "best").records == d.records);
    CHECK(hidden_trace(g, env, 17).size() == 50);

    std::ostringstream a, b;
    write_vector_dump(a, d);
    write_vector_dump(b, dump_vectors(g, env, 17, "best"));
    CHECK(a.str() == b.str());
    std::istringstream in(a.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line))
        ++lines;
    CHECK(lines == 3 + 50);
}

TEST_CASE("full-scale dumps carry 288 controller inputs")
{
    const auto arch = ArchitectureConfig::full_scale();
    RandomSource rng(10);
    const auto g = init_genome(arch, rng);
    auto env = envs::EnvConfig::full_scale_dodge();
    env.max_steps = 3;
    const auto d = dump_vectors(g, env, 1);
    REQUIRE(d.records.size() == 3);
    CHECK(d.records[0].z.size() + d.records[0].h.size() == 288);
    CHECK(d.records[0].action.size() == 3);
}
