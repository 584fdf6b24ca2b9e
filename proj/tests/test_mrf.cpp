#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <initializer_list>
#include <numbers>
#include <set>
#include <vector>

#include <qseg/mrf.hpp>
#include <qseg/rng.hpp>

using namespace qseg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GrayImage image_of(std::uint32_t w, std::uint32_t h, std::initializer_list<std::uint8_t> px) {
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels = px;
    return img;
}

NoiseModel gauss(std::initializer_list<NoiseModel::ClassParams> ps) {
    NoiseModel m;
    m.kind = NoiseKind::gaussian;
    m.params = ps;
    return m;
}

std::set<std::vector<std::uint8_t>> ground_labelings(const BuildResult& br) {
    std::set<std::vector<std::uint8_t>> out;
    for (const auto& s : brute_force_solve(br.qubo).samples) out.insert(decode(s.bits, br.layout).labels);
    return out;
}

} // namespace

TEST_CASE("neighbor systems") {
    const NeighborSystem n4 = make_neighbors(2, 2, Connectivity::four);
    REQUIRE(n4.edges.size() == 4);
    const NeighborSystem n8 = make_neighbors(2, 2, Connectivity::eight);
    REQUIRE(n8.edges.size() == 6);
    REQUIRE(make_neighbors(3, 3, Connectivity::four).edges.size() == 12);
    REQUIRE(make_neighbors(3, 3, Connectivity::eight).edges.size() == 20);
    REQUIRE(make_neighbors(5, 1, Connectivity::four).edges.size() == 4);
    REQUIRE_THROWS_AS(make_neighbors(0, 3, Connectivity::four), argument_error);

    // no self-edges, no duplicates, all endpoints valid, i < j
    for (auto conn : {Connectivity::four, Connectivity::eight}) {
        const NeighborSystem ns = make_neighbors(7, 5, conn);
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        for (auto [i, j] : ns.edges) {
            REQUIRE(i < j);
            REQUIRE(j < ns.n_pixels());
            REQUIRE(seen.insert({i, j}).second);
        }
    }
}

TEST_CASE("delta expansion is the inequality indicator") {
    for (int a : {0, 1})
        for (int b : {0, 1}) REQUIRE(a + b - 2 * a * b == (a != b ? 1 : 0));
}

TEST_CASE("auto weights") {
    const MrfWeights w = auto_weights(100, 3, 0.6);
    REQUIRE_THAT(w.lambda_a, WithinRel(1.05 * 200.0 * std::log(3.0), 1e-12));
    REQUIRE_THAT(auto_weights(1, 2, 0.5).lambda_a, WithinRel(1.05 * std::log(2.0), 1e-12));
    REQUIRE(auto_weights(10, 2, 0.0).lambda_oh == 1.0); // floor
    REQUIRE_THAT(auto_weights(10, 2, 4.0).lambda_oh, WithinRel(1.05 * 2.0, 1e-12));
    REQUIRE_THROWS_AS(auto_weights(0, 2, 0.5), argument_error);
    REQUIRE_THROWS_AS(auto_weights(10, 1, 0.5), argument_error);
    REQUIRE_THROWS_AS(auto_weights(10, 2, -0.1), argument_error);
}

TEST_CASE("binary 1x1 ground state picks the likely class") {
    // both classes sigma 1; class 2 sits on the observation, class 1 at the
    // distance whose density ratio is 9, so the normalized class
    // probabilities at x=0 are exactly (0.1, 0.9)
    const GrayImage img = image_of(1, 1, {0});
    const NoiseModel m = gauss({{std::sqrt(2.0 * std::log(9.0)), 1.0}, {0.0, 1.0}});
    const NeighborSystem nbrs = make_neighbors(1, 1, Connectivity::four);
    MrfWeights w;
    w.lambda_p = 0.5;
    w.lambda_a = 1.0;
    const BuildResult br = build_binary(img, m, nbrs, w);
    REQUIRE(br.layout.n_vars == 3);
    REQUIRE(br.layout.ancilla_a == 1);
    REQUIRE(br.layout.ancilla_b == 2);
    REQUIRE(br.layout.energy_offset == -1.0);

    const SampleSet gs = brute_force_solve(br.qubo);
    REQUIRE(gs.samples.size() == 1);
    // pixel = object, z_a = 1, z_b = 0; only the pixel-to-b edge is cut,
    // earning log p(bg) = log 0.1, plus the -lambda_a ancilla reward
    REQUIRE(gs.samples[0].bits == std::vector<std::uint8_t>{1, 1, 0});
    REQUIRE_THAT(gs.samples[0].energy, WithinAbs(std::log(0.1) - 1.0, 1e-12));

    const Labeling lab = decode(gs.samples[0].bits, br.layout);
    REQUIRE(lab.labels == std::vector<std::uint8_t>{2});
    REQUIRE(lab.violations.empty());
}

TEST_CASE("binary ancilla constraint dominates with auto weights") {
    Rng rng(31);
    for (int rep = 0; rep < 30; ++rep) {
        const std::uint32_t w = 1 + std::uint32_t(rng.below(2)), h = 1 + std::uint32_t(rng.below(2));
        GrayImage img;
        img.width = w;
        img.height = h;
        img.pixels.resize(std::size_t(w) * h);
        for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
        const NoiseModel m = gauss({{40.0 + 40.0 * rng.uniform(), 5.0 + 20.0 * rng.uniform()},
                                    {150.0 + 60.0 * rng.uniform(), 5.0 + 20.0 * rng.uniform()}});
        const MrfWeights wt = auto_weights(img.size(), 2, rng.uniform() * 0.8);
        const BuildResult br = build_binary(img, m, make_neighbors(w, h, Connectivity::four), wt);
        for (const auto& s : brute_force_solve(br.qubo).samples) {
            REQUIRE(s.bits[br.layout.ancilla_a] == 1);
            REQUIRE(s.bits[br.layout.ancilla_b] == 0);
        }
    }
}

TEST_CASE("one-hot 1x1 three-class ground state") {
    // normalized probabilities (0.7, 0.2, 0.1) at x=0: gaussians at distances
    // with density ratios 2/7 and 1/7
    const GrayImage img = image_of(1, 1, {0});
    const NoiseModel m = gauss({{0.0, 1.0},
                                {std::sqrt(2.0 * std::log(7.0 / 2.0)), 1.0},
                                {std::sqrt(2.0 * std::log(7.0)), 1.0}});
    MrfWeights w;
    w.lambda_p = 0.0;
    w.lambda_oh = 1.0;
    w.lambda_a = 5.0;
    const BuildResult br = build_qclass(img, m, make_neighbors(1, 1, Connectivity::four), w);
    REQUIRE(br.layout.n_vars == 4);
    REQUIRE(br.layout.ancilla_a == 3);

    const SampleSet gs = brute_force_solve(br.qubo);
    REQUIRE(gs.samples.size() == 1);
    // class-1 bit + z_alpha: pays the cut edges to the other two classes
    REQUIRE(gs.samples[0].bits == std::vector<std::uint8_t>{1, 0, 0, 1});
    REQUIRE_THAT(gs.samples[0].energy, WithinAbs(std::log(0.2) + std::log(0.1) - 1.0 - 5.0, 1e-12));

    const Labeling lab = decode(gs.samples[0].bits, br.layout);
    REQUIRE(lab.labels == std::vector<std::uint8_t>{1});
    REQUIRE(lab.violations.empty());
}

TEST_CASE("one-hot energy offset ties QUBO to MRF energy") {
    Rng rng(77);
    for (int rep = 0; rep < 50; ++rep) {
        const std::uint32_t wd = 1 + std::uint32_t(rng.below(2)), ht = 1 + std::uint32_t(rng.below(2));
        const int Q = 2 + int(rng.below(3));
        GrayImage img;
        img.width = wd;
        img.height = ht;
        img.pixels.resize(std::size_t(wd) * ht);
        for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
        NoiseModel m;
        m.kind = NoiseKind::gaussian;
        for (int q = 0; q < Q; ++q) m.params.push_back({255.0 * rng.uniform(), 0.5 + 30.0 * rng.uniform()});
        const NeighborSystem nbrs = make_neighbors(wd, ht, Connectivity::four);
        const double lambda_p = rng.uniform() * 2.0;
        const MrfWeights w = auto_weights(img.size(), Q, lambda_p);
        const BuildResult br = build_qclass(img, m, nbrs, w);

        std::vector<std::uint8_t> labels(img.size());
        for (auto& l : labels) l = std::uint8_t(1 + rng.below(std::uint64_t(Q)));
        const auto bits = encode(labels, br.layout);
        const double via_qubo = br.qubo.energy(bits) - br.layout.energy_offset;
        const double direct = mrf_energy(labels, img, m, nbrs, lambda_p);
        REQUIRE_THAT(via_qubo, WithinRel(direct, 1e-9));
    }
}

TEST_CASE("one-hot constraint dominates with auto weights") {
    // pixels are drawn from the model's own mixture: the bound guards real
    // segmentation instances, where every pixel is plausible under some class
    Rng rng(32);
    for (int rep = 0; rep < 30; ++rep) {
        const std::uint32_t wd = 1 + std::uint32_t(rng.below(2)), ht = 1 + std::uint32_t(rng.below(2));
        const int Q = 2 + int(rng.below(2));
        const double sigma = 3.0 + 22.0 * rng.uniform(); // shared across classes
        NoiseModel m;
        m.kind = NoiseKind::gaussian;
        double mu = 30.0 * rng.uniform();
        for (int q = 0; q < Q; ++q) {
            m.params.push_back({mu, sigma});
            mu += 40.0 + 40.0 * rng.uniform();
        }
        GrayImage img;
        img.width = wd;
        img.height = ht;
        img.pixels.resize(std::size_t(wd) * ht);
        for (auto& p : img.pixels) {
            const auto& cp = m.params[rng.below(std::uint64_t(Q))];
            p = std::uint8_t(std::lround(std::clamp(cp.a + sigma * rng.gaussian(), 0.0, 255.0)));
        }
        const MrfWeights w = auto_weights(img.size(), Q, rng.uniform() * 0.8);
        const BuildResult br = build_qclass(img, m, make_neighbors(wd, ht, Connectivity::four), w);
        for (const auto& s : brute_force_solve(br.qubo).samples) {
            REQUIRE(s.bits[br.layout.ancilla_a] == 1);
            REQUIRE(decode(s.bits, br.layout).violations.empty());
        }
    }
}

TEST_CASE("per-pixel one-hot blocks are the constraint minimum") {
    // flat likelihoods isolate the block structure; with lambda_oh above
    // log Q the Q one-hot blocks are exactly the ground states (energy ties)
    for (int Q = 2; Q <= 5; ++Q) {
        const GrayImage img = image_of(1, 1, {100});
        NoiseModel m;
        m.kind = NoiseKind::gaussian;
        for (int q = 0; q < Q; ++q) m.params.push_back({100.0, 10.0});
        MrfWeights w;
        w.lambda_p = 0.0;
        w.lambda_oh = 2.0 * std::log(double(Q)) + 0.1;
        w.lambda_a = 2.0 * double(Q) * std::log(double(Q)) + 1.0;
        const BuildResult br = build_qclass(img, m, make_neighbors(1, 1, Connectivity::four), w);
        const SampleSet gs = brute_force_solve(br.qubo);
        REQUIRE(gs.samples.size() == std::size_t(Q));
        for (const auto& s : gs.samples) {
            int hot = 0;
            for (int q = 0; q < Q; ++q) hot += s.bits[std::size_t(q)];
            REQUIRE(hot == 1);
            REQUIRE(s.bits[std::size_t(Q)] == 1);
        }
    }
}

TEST_CASE("two-pixel equiprobable instance prefers agreement") {
    const GrayImage img = image_of(2, 1, {100, 100});
    const NoiseModel m = gauss({{100.0, 10.0}, {100.0, 10.0}}); // equiprobable classes
    MrfWeights w = auto_weights(2, 2, 0.5);
    const BuildResult br = build_qclass(img, m, make_neighbors(2, 1, Connectivity::four), w);
    const auto grounds = ground_labelings(br);
    REQUIRE(grounds == std::set<std::vector<std::uint8_t>>{{1, 1}, {2, 2}});
}

TEST_CASE("binary and one-hot schemes agree on small instances") {
    Rng rng(55);
    for (int rep = 0; rep < 20; ++rep) {
        GrayImage img;
        img.width = 2;
        img.height = 2;
        img.pixels.resize(4);
        for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
        const NoiseModel m = gauss({{60.0 + 20.0 * rng.uniform(), 5.0 + 20.0 * rng.uniform()},
                                    {170.0 + 20.0 * rng.uniform(), 5.0 + 20.0 * rng.uniform()}});
        const NeighborSystem nbrs = make_neighbors(2, 2, Connectivity::four);
        const MrfWeights w = auto_weights(4, 2, 0.5);
        const auto gb = ground_labelings(build_binary(img, m, nbrs, w));
        const auto gq = ground_labelings(build_qclass(img, m, nbrs, w));
        REQUIRE(gb == gq);
    }
}

TEST_CASE("decode") {
    VarLayout lay;
    lay.scheme = Scheme::one_hot;
    lay.n_pixels = 1;
    lay.q = 3;
    lay.n_vars = 4;
    lay.ancilla_a = 3;

    Labeling ok = decode({0, 1, 0, 1}, lay);
    REQUIRE(ok.labels == std::vector<std::uint8_t>{2});
    REQUIRE(ok.violations.empty());

    Labeling two_hot = decode({1, 1, 0, 1}, lay);
    REQUIRE(two_hot.labels == std::vector<std::uint8_t>{1}); // lowest hot class
    REQUIRE(two_hot.violations == std::vector<std::size_t>{0});

    Labeling none_hot = decode({0, 0, 0, 1}, lay);
    REQUIRE(none_hot.labels == std::vector<std::uint8_t>{1}); // class 1 fallback
    REQUIRE(none_hot.violations == std::vector<std::size_t>{0});

    REQUIRE_THROWS_AS(decode({0, 1, 0}, lay), argument_error);

    VarLayout bin;
    bin.scheme = Scheme::binary;
    bin.n_pixels = 2;
    bin.q = 2;
    bin.n_vars = 4;
    bin.ancilla_a = 2;
    bin.ancilla_b = 3;
    const Labeling lb = decode({1, 0, 1, 0}, bin);
    REQUIRE(lb.labels == std::vector<std::uint8_t>{2, 1}); // set bit = object = class 2
    REQUIRE(lb.violations.empty());
}

TEST_CASE("encode inverts decode on clean labelings") {
    Rng rng(91);
    for (int rep = 0; rep < 20; ++rep) {
        GrayImage img;
        img.width = 3;
        img.height = 2;
        img.pixels = {10, 60, 110, 160, 210, 250};
        NoiseModel m;
        m.kind = NoiseKind::gaussian;
        const int Q = 2 + int(rng.below(3));
        for (int q = 0; q < Q; ++q) m.params.push_back({40.0 * (q + 1), 20.0});
        const BuildResult br = build_qclass(img, m, make_neighbors(3, 2, Connectivity::four), auto_weights(6, Q, 0.5));
        std::vector<std::uint8_t> labels(6);
        for (auto& l : labels) l = std::uint8_t(1 + rng.below(std::uint64_t(Q)));
        const auto bits = encode(labels, br.layout);
        REQUIRE(bits[br.layout.ancilla_a] == 1);
        const Labeling back = decode(bits, br.layout);
        REQUIRE(back.labels == labels);
        REQUIRE(back.violations.empty());
    }
    VarLayout lay;
    lay.scheme = Scheme::one_hot;
    lay.n_pixels = 1;
    lay.q = 2;
    lay.n_vars = 3;
    lay.ancilla_a = 2;
    REQUIRE_THROWS_AS(encode({3}, lay), argument_error);
    REQUIRE_THROWS_AS(encode({0}, lay), argument_error);
    REQUIRE_THROWS_AS(encode({1, 1}, lay), argument_error);
}

TEST_CASE("repair fills violations from non-violated neighbors") {
    // 3x3 grid, center violated, neighbors vote 3 (two of them) vs 2 (one)
    const NeighborSystem nbrs = make_neighbors(3, 3, Connectivity::four);
    Labeling lab;
    lab.labels = {1, 2, 1, 3, 1, 3, 1, 1, 1}; // center (idx 4) currently class 1
    lab.violations = {4, 7};                  // pixel 7 (a neighbor) also violated: excluded from the vote
    repair(lab, nbrs);
    REQUIRE(lab.labels[4] == 3); // votes {2 (idx 1), 3 (idx 3), 3 (idx 5)}; idx 7 skipped
    REQUIRE(lab.labels[7] == 1); // votes {1 (idx 6), 1 (idx 8)}; idx 4 skipped
    REQUIRE(lab.violations == std::vector<std::size_t>{4, 7}); // list kept for reporting

    // tie goes to the lowest class
    Labeling tie;
    tie.labels = {3, 1, 2};
    tie.violations = {1};
    repair(tie, make_neighbors(3, 1, Connectivity::four));
    REQUIRE(tie.labels[1] == 2); // neighbors {3, 2} tie 1-1 -> 2

    // no usable neighbor -> class 1
    Labeling alone;
    alone.labels = {2, 3};
    alone.violations = {0, 1};
    repair(alone, make_neighbors(2, 1, Connectivity::four));
    REQUIRE(alone.labels[0] == 1);
    REQUIRE(alone.labels[1] == 1);

    Labeling mismatch;
    mismatch.labels = {1, 1};
    mismatch.violations = {0};
    REQUIRE_THROWS_AS(repair(mismatch, make_neighbors(3, 1, Connectivity::four)), argument_error);
}

TEST_CASE("mrf energy") {
    // sigma chosen so the density at the mean is exactly 1: p = 1, -log p = 0
    const double s1 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    {
        const GrayImage img = image_of(2, 1, {100, 100});
        const NoiseModel m = gauss({{100.0, s1}, {200.0, s1}});
        const NeighborSystem nbrs = make_neighbors(2, 1, Connectivity::four);
        REQUIRE_THAT(mrf_energy({1, 1}, img, m, nbrs, 0.5), WithinAbs(0.0, 1e-12));
        // one cut edge; the class-2 pixel is 100 away from its mean, so it
        // pays the floor cost
        REQUIRE_THAT(mrf_energy({1, 2}, img, m, nbrs, 0.5), WithinAbs(0.5 + 23.025850929940457, 1e-9));
    }
    REQUIRE_THROWS_AS(mrf_energy({1}, image_of(2, 1, {0, 0}), gauss({{0.0, 1.0}, {1.0, 1.0}}),
                                 make_neighbors(2, 1, Connectivity::four), 0.5),
                      argument_error);
    REQUIRE_THROWS_AS(mrf_energy({1, 3}, image_of(2, 1, {0, 0}), gauss({{0.0, 1.0}, {1.0, 1.0}}),
                                 make_neighbors(2, 1, Connectivity::four), 0.5),
                      argument_error);
}

TEST_CASE("builder validation") {
    const GrayImage img = image_of(2, 1, {0, 255});
    const NeighborSystem nbrs = make_neighbors(2, 1, Connectivity::four);
    const NoiseModel m2 = gauss({{0.0, 25.0}, {255.0, 25.0}});
    const MrfWeights w = auto_weights(2, 2, 0.5);

    REQUIRE_THROWS_AS(build_binary(img, gauss({{0.0, 1.0}}), nbrs, w), argument_error);
    REQUIRE_THROWS_AS(build_binary(img, m2, make_neighbors(3, 1, Connectivity::four), w), argument_error);
    {
        MrfWeights bad = w;
        bad.lambda_a = 0.0;
        REQUIRE_THROWS_AS(build_binary(img, m2, nbrs, bad), argument_error);
        REQUIRE_THROWS_AS(build_qclass(img, m2, nbrs, bad), argument_error);
    }
    {
        MrfWeights bad = w;
        bad.lambda_oh = 0.0;
        REQUIRE_THROWS_AS(build_qclass(img, m2, nbrs, bad), argument_error);
        REQUIRE_NOTHROW(build_binary(img, m2, nbrs, bad)); // binary has no one-hot term
    }
    {
        MrfWeights bad = w;
        bad.lambda_p = -0.5;
        REQUIRE_THROWS_AS(build_qclass(img, m2, nbrs, bad), argument_error);
    }

    // weibull density is 0 at x=0 for every class: binary scheme rejects the
    // pixel outright
    NoiseModel wb;
    wb.kind = NoiseKind::weibull;
    wb.params = {{2.0, 1.5}, {3.0, 1.5}};
    REQUIRE_THROWS_AS(build_binary(image_of(1, 1, {0}), wb, make_neighbors(1, 1, Connectivity::four), w),
                      model_error);
}

TEST_CASE("layout json and qubo dump sidecar") {
    const GrayImage img = image_of(2, 1, {10, 240});
    const NoiseModel m = gauss({{0.0, 25.0}, {255.0, 25.0}});
    const BuildResult br = build_qclass(img, m, make_neighbors(2, 1, Connectivity::four), auto_weights(2, 2, 0.5));
    const nlohmann::json j = layout_to_json(br.layout);
    REQUIRE(j.at("scheme") == "one_hot");
    REQUIRE(j.at("n") == 2);
    REQUIRE(j.at("q") == 2);
    REQUIRE(j.at("n_vars") == 5);
    REQUIRE(j.at("ancilla") == nlohmann::json::array({4}));
    REQUIRE(j.at("energy_offset").get<double>() == br.layout.energy_offset);

    const auto dir = std::filesystem::temp_directory_path() / "qseg_mrf_dump_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "q.qubo";
    dump_qubo_with_layout(br.qubo, br.layout, path);
    const Qubo back = load_qubo(path);
    REQUIRE(back.linear() == br.qubo.linear());
    REQUIRE(back.quadratic() == br.qubo.quadratic());
    REQUIRE(std::filesystem::exists(path.string() + ".layout.json"));
    std::filesystem::remove_all(dir);
}
