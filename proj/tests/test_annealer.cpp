#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include <qseg/annealer.hpp>
#include <qseg/mrf.hpp>
#include <qseg/rng.hpp>

using namespace qseg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

bool same_samples(const SampleSet& a, const SampleSet& b) {
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t k = 0; k < a.samples.size(); ++k)
        if (a.samples[k].bits != b.samples[k].bits || a.samples[k].energy != b.samples[k].energy) return false;
    return true;
}

} // namespace

TEST_CASE("default schedule ranges") {
    {
        const AnnealSchedule s = default_schedule(Qubo(3)); // nothing to optimize
        REQUIRE(s.beta_start == 0.1);
        REQUIRE(s.beta_end == 10.0);
    }
    {
        Qubo q(1);
        q.add_linear(0, -1.0);
        const AnnealSchedule s = default_schedule(q); // no couplings: cold cap
        REQUIRE(s.beta_start == 1.0);
        REQUIRE(s.beta_end == 1e6);
    }
    {
        Qubo q(2);
        q.add_quadratic(0, 1, 10.0); // start and end would coincide at 0.1
        const AnnealSchedule s = default_schedule(q);
        REQUIRE_THAT(s.beta_start, WithinRel(0.1, 1e-12));
        REQUIRE_THAT(s.beta_end, WithinRel(100.0, 1e-12));
    }
    {
        Qubo q(2);
        q.add_linear(0, -2.0);
        q.add_quadratic(0, 1, 0.5);
        const AnnealSchedule s = default_schedule(q);
        REQUIRE_THAT(s.beta_start, WithinRel(1.0 / 2.5, 1e-12)); // var 0 bound: 2 + 0.5
        REQUIRE_THAT(s.beta_end, WithinRel(2.0, 1e-12));         // 1 / smallest coupling
    }
    // any derived schedule passes its own validation
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        Qubo q(4);
        for (std::uint32_t i = 0; i < 4; ++i) {
            if (rng.bit()) q.add_linear(i, rng.gaussian() * std::pow(10.0, rng.uniform() * 6 - 3));
            for (std::uint32_t j = i + 1; j < 4; ++j)
                if (rng.bit()) q.add_quadratic(i, j, rng.gaussian() * std::pow(10.0, rng.uniform() * 6 - 3));
        }
        REQUIRE_NOTHROW(default_schedule(q).validate());
    }
}

TEST_CASE("schedule validation and interpolation") {
    AnnealSchedule s;
    s.n_sweeps = 3;
    s.beta_start = 1.0;
    s.beta_end = 100.0;
    REQUIRE_NOTHROW(s.validate());
    REQUIRE_THAT(s.beta_at(0), WithinRel(1.0, 1e-12));
    REQUIRE_THAT(s.beta_at(1), WithinRel(10.0, 1e-12)); // geometric midpoint
    REQUIRE_THAT(s.beta_at(2), WithinRel(100.0, 1e-12));

    s.interpolation = AnnealSchedule::Interp::linear;
    REQUIRE_THAT(s.beta_at(1), WithinRel(50.5, 1e-12));
    REQUIRE_THAT(s.beta_at(0), WithinRel(1.0, 1e-12));
    REQUIRE_THAT(s.beta_at(2), WithinRel(100.0, 1e-12));

    s.n_sweeps = 1;
    REQUIRE(s.beta_at(0) == 100.0); // single sweep runs cold

    auto bad = [](auto mut) {
        AnnealSchedule t;
        mut(t);
        REQUIRE_THROWS_AS(t.validate(), argument_error);
    };
    bad([](AnnealSchedule& t) { t.n_sweeps = 0; });
    bad([](AnnealSchedule& t) { t.beta_start = t.beta_end; });
    bad([](AnnealSchedule& t) { t.beta_start = 20.0; });
    bad([](AnnealSchedule& t) { t.beta_start = 0.0; });
    bad([](AnnealSchedule& t) { t.beta_end = -1.0; });
    bad([](AnnealSchedule& t) { t.beta_end = std::numeric_limits<double>::infinity(); });
    bad([](AnnealSchedule& t) { t.beta_start = std::numeric_limits<double>::quiet_NaN(); });
}

TEST_CASE("sampling a single-variable problem") {
    Qubo q(1);
    q.set_offset(2.5);
    q.add_linear(0, -1.0);
    SamplerConfig cfg;
    cfg.n_samples = 32;
    cfg.seed = 5;
    cfg.threads = 1;
    cfg.schedule = default_schedule(q);
    cfg.schedule.n_sweeps = 50;
    const SampleSet ss = sample(q, cfg);
    REQUIRE(ss.samples.size() == 32);
    REQUIRE(ss.rng_seed == 5);
    for (const auto& s : ss.samples) {
        REQUIRE(s.bits == std::vector<std::uint8_t>{1});
        REQUIRE(s.energy == 1.5);
    }
    REQUIRE(ss.best().energy == 1.5);
}

TEST_CASE("sampler configuration errors") {
    Qubo q(2);
    q.add_linear(0, 1.0);
    SamplerConfig cfg;
    cfg.n_samples = 0;
    REQUIRE_THROWS_AS(sample(q, cfg), argument_error);
    cfg.n_samples = 1;
    cfg.schedule.beta_start = 5.0;
    cfg.schedule.beta_end = 5.0;
    REQUIRE_THROWS_AS(sample(q, cfg), argument_error);
}

TEST_CASE("stored energies are canonical recomputations") {
    Rng rng(23);
    Qubo q(10);
    for (std::uint32_t i = 0; i < 10; ++i) {
        q.add_linear(i, rng.gaussian());
        for (std::uint32_t j = i + 1; j < 10; ++j)
            if (rng.uniform() < 0.4) q.add_quadratic(i, j, rng.gaussian());
    }
    SamplerConfig cfg;
    cfg.n_samples = 20;
    cfg.seed = 9;
    cfg.threads = 1;
    cfg.schedule = default_schedule(q);
    cfg.schedule.n_sweeps = 30;
    for (const auto& s : sample(q, cfg).samples) REQUIRE(s.energy == q.energy(s.bits));
}

TEST_CASE("sampling is deterministic in the seed and thread count") {
    Rng rng(41);
    Qubo q(12);
    for (std::uint32_t i = 0; i < 12; ++i) {
        q.add_linear(i, rng.gaussian());
        for (std::uint32_t j = i + 1; j < 12; ++j)
            if (rng.uniform() < 0.3) q.add_quadratic(i, j, rng.gaussian());
    }
    SamplerConfig cfg;
    cfg.n_samples = 16;
    cfg.seed = 77;
    cfg.threads = 1;
    cfg.schedule = default_schedule(q);
    cfg.schedule.n_sweeps = 100;

    const SampleSet a = sample(q, cfg);
    const SampleSet b = sample(q, cfg);
    REQUIRE(same_samples(a, b));

    SamplerConfig four = cfg;
    four.threads = 4;
    REQUIRE(same_samples(a, sample(q, four)));

    SamplerConfig other = cfg;
    other.seed = 78;
    REQUIRE_FALSE(same_samples(a, sample(q, other)));
}

TEST_CASE("annealer reaches the exact ground state of a small MRF") {
    GrayImage img;
    img.width = 3;
    img.height = 3;
    img.pixels = {20, 30, 25, 200, 35, 210, 195, 205, 190};
    NoiseModel m;
    m.kind = NoiseKind::gaussian;
    m.params = {{30.0, 20.0}, {200.0, 20.0}};
    const BuildResult br = build_binary(img, m, make_neighbors(3, 3, Connectivity::four), auto_weights(9, 2, 0.5));
    const double ground = brute_force_solve(br.qubo).samples[0].energy;

    SamplerConfig cfg;
    cfg.n_samples = 100;
    cfg.seed = 3;
    cfg.threads = 1;
    cfg.schedule = default_schedule(br.qubo);
    cfg.schedule.n_sweeps = 200;
    const Sample best = sample(br.qubo, cfg).best();
    REQUIRE(best.energy == ground); // both are canonical Qubo::energy values
}

TEST_CASE("longer schedules do not hurt the mean sample energy") {
    GrayImage img;
    img.width = 4;
    img.height = 4;
    Rng pix(13);
    img.pixels.resize(16);
    for (auto& p : img.pixels) p = std::uint8_t(pix.below(256));
    NoiseModel m;
    m.kind = NoiseKind::gaussian;
    m.params = {{60.0, 45.0}, {130.0, 45.0}, {200.0, 45.0}};
    const BuildResult br = build_qclass(img, m, make_neighbors(4, 4, Connectivity::four), auto_weights(16, 3, 0.8));

    auto mean_energy = [&](std::uint32_t sweeps) {
        SamplerConfig cfg;
        cfg.n_samples = 200;
        cfg.seed = 19;
        cfg.threads = 1;
        cfg.schedule = default_schedule(br.qubo);
        cfg.schedule.n_sweeps = sweeps;
        double acc = 0.0;
        for (const auto& s : sample(br.qubo, cfg).samples) acc += s.energy;
        return acc / 200.0;
    };
    REQUIRE(mean_energy(500) <= mean_energy(5) + 1e-9);
}

TEST_CASE("deterministic exponential approximation tracks libm") {
    // the acceptance test uses exp(-t) only for t in (1e-4, 44]
    double worst = 0.0;
    for (int k = 0; k <= 4000; ++k) {
        const double t = 1e-4 * std::pow(44.0 / 1e-4, double(k) / 4000.0);
        const double approx = detail::exp_neg(t);
        const double exact = std::exp(-t);
        REQUIRE(approx > 0.0);
        worst = std::max(worst, std::abs(approx - exact) / exact);
    }
    REQUIRE(worst < 5e-5);
}
