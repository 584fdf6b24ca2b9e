#pragma once

/// Expectation-maximization around the QUBO sampler: the E-step compiles the
/// current noise model into a QUBO, anneals it and decodes the best sample
/// into a labeling; the M-step refits each class on its labeled pixels.
/// Convergence is measured as the energy change of the *fixed* labeling z^t
/// when the QUBO is rebuilt with the refitted parameters.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annealer.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "mrf.hpp"
#include "noise.hpp"
#include "rng.hpp"

namespace qseg {

/// Pairwise weight defaults, per class count.
inline double default_lambda_p(int Q) {
    switch (Q) {
        case 3: return 0.6;
        case 4: return 0.5;
        case 5: return 0.35;
        default: return 0.5;
    }
}

struct EmConfig {
    int q = 2;
    int max_epochs = 30; // T
    double delta = 5.0;  // stop when the convergence measure drops below this
    SamplerConfig sampler{.n_samples = 100};
    int final_samples_multiplier = 10;
    double lambda_p = -1.0; // < 0: use default_lambda_p(q)
    Scheme scheme = Scheme::one_hot;
    NoiseKind kind = NoiseKind::gaussian;
    Connectivity connectivity = Connectivity::four;
    std::optional<double> lambda_a_override;
    std::optional<double> lambda_oh_override;
    // When set, anneal with exactly sampler.schedule; otherwise the beta
    // range is re-derived from each epoch's QUBO (sweep count and
    // interpolation are kept from sampler.schedule either way).
    bool fixed_betas = false;

    enum class Init { kmeans, threshold, explicit_model } init = Init::kmeans;
    double shadow_max = 7.0; // threshold init buckets
    double target_min = 20.0;
    NoiseModel explicit_model; // used when init == explicit_model
};

struct EmEpoch {
    NoiseModel theta;       // parameters used by this epoch's E-step
    double best_energy = 0; // best sample energy under theta
    double delta = 0;       // |L(theta^{t+1}) - L(theta^t)| on the fixed labeling
    std::size_t violations = 0;
    std::vector<std::size_t> carried; // classes with no pixels: parameters kept as-is
    double wall_ms = 0;
};

struct EmResult {
    std::vector<EmEpoch> epochs;
    bool converged = false; // true when the delta test stopped the loop
    NoiseModel final_model;
    Labeling final_labeling;
    double final_best_energy = 0;
    std::size_t final_violations = 0;
    std::size_t final_samples = 0;
    double final_wall_ms = 0;
    double total_wall_ms = 0;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// 1-D k-means (k-means++ seeding, Lloyd iterations capped at 100) on the
/// intensities.  Gaussian: class means are the sorted centers and every class
/// shares the global within-cluster standard deviation (floored).  Weibull:
/// each cluster is fitted by mle_update.
inline NoiseModel init_kmeans(const GrayImage& img, int Q, NoiseKind kind, std::uint64_t seed) {
    if (Q < 2) throw argument_error("init_kmeans: Q must be >= 2");
    const std::size_t N = img.size();
    if (N == 0) throw argument_error("init_kmeans: empty image");
    {
        std::vector<std::uint8_t> d(img.pixels);
        std::sort(d.begin(), d.end());
        d.erase(std::unique(d.begin(), d.end()), d.end());
        if (d.size() < std::size_t(Q))
            throw model_error("init_kmeans: image has " + std::to_string(d.size()) +
                              " distinct intensities, need at least " + std::to_string(Q));
    }

    Rng rng(seed);
    std::vector<double> x(N);
    for (std::size_t i = 0; i < N; ++i) x[i] = img.pixels[i];

    // k-means++ seeding
    std::vector<double> centers;
    centers.push_back(x[rng.below(N)]);
    std::vector<double> d2(N);
    while (centers.size() < std::size_t(Q)) {
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double best = std::numeric_limits<double>::max();
            for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            pick = N - 1;
            for (std::size_t i = 0; i < N; ++i) {
                acc += d2[i];
                if (acc > u) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(N);
        }
        centers.push_back(x[pick]);
    }

    // Lloyd
    std::vector<std::uint8_t> assign(N, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < N; ++i) {
            std::uint8_t best = 0;
            double bd = std::numeric_limits<double>::max();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double d = (x[i] - centers[c]) * (x[i] - centers[c]);
                if (d < bd) {
                    bd = d;
                    best = static_cast<std::uint8_t>(c);
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::vector<double> sum(centers.size(), 0.0);
        std::vector<std::size_t> cnt(centers.size(), 0);
        for (std::size_t i = 0; i < N; ++i) {
            sum[assign[i]] += x[i];
            ++cnt[assign[i]];
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (cnt[c] > 0) centers[c] = sum[c] / double(cnt[c]);
        if (!changed) break;
    }

    // sort centers ascending and re-assign accordingly
    std::sort(centers.begin(), centers.end());
    for (std::size_t i = 0; i < N; ++i) {
        std::uint8_t best = 0;
        double bd = std::numeric_limits<double>::max();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = (x[i] - centers[c]) * (x[i] - centers[c]);
            if (d < bd) {
                bd = d;
                best = static_cast<std::uint8_t>(c);
            }
        }
        assign[i] = best;
    }

    NoiseModel m;
    m.kind = kind;
    m.params.resize(std::size_t(Q));
    if (kind == NoiseKind::gaussian) {
        double ss = 0.0;
        for (std::size_t i = 0; i < N; ++i) ss += (x[i] - centers[assign[i]]) * (x[i] - centers[assign[i]]);
        const double sigma = std::max(std::sqrt(ss / double(N)), kSigmaFloor);
        for (int q = 0; q < Q; ++q) m.params[std::size_t(q)] = {centers[std::size_t(q)], sigma};
    } else {
        for (int q = 0; q < Q; ++q) {
            std::vector<double> data;
            for (std::size_t i = 0; i < N; ++i)
                if (assign[i] == q) data.push_back(x[i]);
            if (data.empty()) throw model_error("init_kmeans: empty cluster " + std::to_string(q + 1));
            mle_update(m, data, std::size_t(q + 1));
        }
    }
    return m;
}

/// Three-bucket intensity thresholding (shadow <= shadow_max,
/// target >= target_min, background between); each bucket is fitted by
/// mle_update.  Produces a 3-class model.
inline NoiseModel init_threshold(const GrayImage& img, NoiseKind kind, double shadow_max = 7.0,
                                 double target_min = 20.0) {
    if (!(shadow_max < target_min)) throw argument_error("init_threshold: need shadow_max < target_min");
    std::vector<double> shadow, background, target;
    for (std::uint8_t p : img.pixels) {
        const double v = p;
        if (v <= shadow_max)
            shadow.push_back(v);
        else if (v >= target_min)
            target.push_back(v);
        else
            background.push_back(v);
    }
    std::string empty;
    for (const auto& [name, bucket] :
         {std::pair<const char*, const std::vector<double>*>{"shadow", &shadow}, {"background", &background}, {"target", &target}})
        if (bucket->empty()) empty += (empty.empty() ? "" : ", ") + std::string(name);
    if (!empty.empty()) throw model_error("init_threshold: empty bucket: " + empty);
    NoiseModel m;
    m.kind = kind;
    m.params.resize(3);
    mle_update(m, shadow, 1);
    mle_update(m, background, 2);
    mle_update(m, target, 3);
    return m;
}

// ---------------------------------------------------------------------------
// EM loop
// ---------------------------------------------------------------------------

namespace detail {

inline BuildResult build_for(const GrayImage& img, const NoiseModel& model, const NeighborSystem& nbrs,
                             const MrfWeights& w, Scheme scheme) {
    return scheme == Scheme::binary ? build_binary(img, model, nbrs, w) : build_qclass(img, model, nbrs, w);
}

// Stream tags for deriving per-stage seeds from the master seed.
inline constexpr std::uint64_t kSeedTagEpoch = 0x100000;
inline constexpr std::uint64_t kSeedTagFinal = 0x200000;
inline constexpr std::uint64_t kSeedTagInit = 0x300000;

inline std::uint64_t sub_seed(std::uint64_t master, std::uint64_t tag) { return rng_stream(master, tag).next_u64(); }

} // namespace detail

/// M-step: refit every class on the pixels labeled with it; classes with no
/// pixels keep their previous parameters (their 1-based indices land in
/// `carried` when the caller provides it).
inline NoiseModel m_step(const NoiseModel& model, const std::vector<std::uint8_t>& labels, const GrayImage& img,
                         std::vector<std::size_t>* carried = nullptr) {
    if (labels.size() != img.size()) throw argument_error("m_step: labeling does not match image");
    NoiseModel next = model;
    const std::size_t Q = model.n_classes();
    for (std::size_t q = 1; q <= Q; ++q) {
        std::vector<double> data;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == q) data.push_back(img.pixels[i]);
        if (data.empty()) {
            if (carried) carried->push_back(q);
        } else {
            mle_update(next, data, q);
        }
    }
    return next;
}

/// Validates the parts of the config that matter before any compute.
inline void check_em_config(const EmConfig& cfg) {
    if (cfg.q < 2) throw argument_error("run_em: q must be >= 2");
    if (cfg.scheme == Scheme::binary && cfg.q != 2) throw argument_error("run_em: binary scheme requires q == 2");
    if (cfg.max_epochs < 1) throw argument_error("run_em: max_epochs must be >= 1");
    if (cfg.final_samples_multiplier < 1) throw argument_error("run_em: final_samples_multiplier must be >= 1");
    if (!(cfg.delta > 0.0)) throw argument_error("run_em: delta must be > 0");
}

/// MRF weights actually used by run_em: auto_weights on the effective
/// pairwise strength, with any explicit overrides applied afterwards.
inline MrfWeights effective_weights(std::size_t n_pixels, const EmConfig& cfg) {
    const double lambda_p = cfg.lambda_p < 0.0 ? default_lambda_p(cfg.q) : cfg.lambda_p;
    MrfWeights w = auto_weights(n_pixels, cfg.q, lambda_p);
    if (cfg.lambda_a_override) w.lambda_a = *cfg.lambda_a_override;
    if (cfg.lambda_oh_override) w.lambda_oh = *cfg.lambda_oh_override;
    return w;
}

/// theta^0 exactly as run_em derives it (including the k-means seed stream).
inline NoiseModel initial_model(const GrayImage& img, const EmConfig& cfg) {
    switch (cfg.init) {
        case EmConfig::Init::kmeans:
            return init_kmeans(img, cfg.q, cfg.kind, detail::sub_seed(cfg.sampler.seed, detail::kSeedTagInit));
        case EmConfig::Init::threshold:
            if (cfg.q != 3) throw argument_error("run_em: threshold init produces exactly 3 classes");
            return init_threshold(img, cfg.kind, cfg.shadow_max, cfg.target_min);
        case EmConfig::Init::explicit_model: {
            NoiseModel theta = cfg.explicit_model;
            theta.validate();
            if (theta.n_classes() != std::size_t(cfg.q))
                throw argument_error("run_em: explicit model has " + std::to_string(theta.n_classes()) +
                                     " classes, expected " + std::to_string(cfg.q));
            if (theta.kind != cfg.kind) throw argument_error("run_em: explicit model kind does not match config");
            return theta;
        }
    }
    throw argument_error("run_em: unknown init");
}

inline EmResult run_em(const GrayImage& img, const EmConfig& cfg) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    auto ms_since = [](clock::time_point from) {
        return std::chrono::duration<double, std::milli>(clock::now() - from).count();
    };

    check_em_config(cfg);
    const NeighborSystem nbrs = make_neighbors(img.width, img.height, cfg.connectivity);
    const MrfWeights w = effective_weights(img.size(), cfg);
    NoiseModel theta = initial_model(img, cfg);

    auto sampler_for = [&](const Qubo& qubo, std::size_t n_samples, std::uint64_t tag) {
        SamplerConfig sc = cfg.sampler;
        sc.n_samples = n_samples;
        sc.seed = detail::sub_seed(cfg.sampler.seed, tag);
        if (!cfg.fixed_betas) {
            AnnealSchedule ds = default_schedule(qubo);
            ds.n_sweeps = cfg.sampler.schedule.n_sweeps;
            ds.interpolation = cfg.sampler.schedule.interpolation;
            sc.schedule = ds;
        }
        return sc;
    };

    EmResult out;
    for (int t = 1; t <= cfg.max_epochs; ++t) {
        const auto t_epoch = clock::now();

        // E-step
        auto built = detail::build_for(img, theta, nbrs, w, cfg.scheme);
        const auto ss = sample(built.qubo, sampler_for(built.qubo, cfg.sampler.n_samples, detail::kSeedTagEpoch + t));
        const Sample& best = ss.best();
        Labeling lab = decode(best.bits, built.layout);
        const std::size_t violations = lab.violations.size();
        repair(lab, nbrs);

        // M-step.  The convergence measure compares the old and the refitted
        // parameters on the same fixed labeling z^t, isolating the parameter
        // change from sampler noise (the raw best-sample energy is what gets
        // reported, but it also moves when one-hot violations shift).
        std::vector<std::size_t> carried;
        const NoiseModel theta_next = m_step(theta, lab.labels, img, &carried);
        const auto rebuilt = detail::build_for(img, theta_next, nbrs, w, cfg.scheme);
        const std::vector<std::uint8_t> zbits = encode(lab.labels, built.layout);
        const double L_t = best.energy;
        const double delta_t = std::abs(rebuilt.qubo.energy(zbits) - built.qubo.energy(zbits));

        EmEpoch ep;
        ep.theta = theta;
        ep.best_energy = L_t;
        ep.delta = delta_t;
        ep.violations = violations;
        ep.carried = std::move(carried);
        ep.wall_ms = ms_since(t_epoch);
        out.epochs.push_back(std::move(ep));

        theta = theta_next;
        if (delta_t < cfg.delta) {
            out.converged = true;
            break;
        }
    }

    // Final refinement: re-run the E-step with the converged parameters and a
    // larger sample budget.
    const auto t_final = clock::now();
    const std::size_t n_final = cfg.sampler.n_samples * std::size_t(cfg.final_samples_multiplier);
    auto built = detail::build_for(img, theta, nbrs, w, cfg.scheme);
    const auto ss = sample(built.qubo, sampler_for(built.qubo, n_final, detail::kSeedTagFinal));
    const Sample& best = ss.best();
    Labeling lab = decode(best.bits, built.layout);
    out.final_violations = lab.violations.size();
    repair(lab, nbrs);
    out.final_model = theta;
    out.final_labeling = std::move(lab);
    out.final_best_energy = best.energy;
    out.final_samples = n_final;
    out.final_wall_ms = ms_since(t_final);
    out.total_wall_ms = ms_since(t_start);
    return out;
}

/// Machine-readable trace: per-epoch parameters, energies, convergence
/// measure, violations and timings, plus the final refinement record.
inline nlohmann::json em_trace_to_json(const EmResult& r) {
    nlohmann::json j;
    j["epochs"] = nlohmann::json::array();
    for (const auto& ep : r.epochs) {
        j["epochs"].push_back({{"theta", to_json(ep.theta)},
                               {"best_energy", ep.best_energy},
                               {"delta", ep.delta},
                               {"violations", ep.violations},
                               {"carried_classes", ep.carried},
                               {"wall_ms", ep.wall_ms}});
    }
    j["epochs_run"] = r.epochs.size();
    j["converged"] = r.converged;
    j["final"] = {{"model", to_json(r.final_model)},
                  {"best_energy", r.final_best_energy},
                  {"violations", r.final_violations},
                  {"samples", r.final_samples},
                  {"wall_ms", r.final_wall_ms}};
    j["total_wall_ms"] = r.total_wall_ms;
    return j;
}

} // namespace qseg
