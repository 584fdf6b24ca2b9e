// qseg — generate synthetic scenes, segment images by compiling an MRF to a
// QUBO and annealing inside an EM loop, score the results, and run parameter
// sweeps.  Exit codes: 0 ok, 2 usage/validation, 3 data error, 4 internal.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <qseg/em.hpp>
#include <qseg/image.hpp>

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config file overlay: values from --config <json> become the defaults that
// command-line flags then override.  Unknown keys anywhere are rejected.
// ---------------------------------------------------------------------------

class Section {
  public:
    Section(const json* j, std::string name) : j_(j), name_(std::move(name)) {
        if (j_ && !j_->is_object()) throw qseg::argument_error("config: \"" + name_ + "\" must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_) return;
        const auto it = j_->find(key);
        if (it == j_->end()) return;
        try {
            it->get_to(out);
        } catch (const json::exception&) {
            throw qseg::argument_error("config: bad value for \"" + name_ + "." + key + "\"");
        }
        seen_.insert(key);
    }

    void finish() const {
        if (!j_) return;
        for (const auto& [k, v] : j_->items())
            if (!seen_.count(k)) throw qseg::argument_error("config: unknown key \"" + name_ + "." + k + "\"");
    }

  private:
    const json* j_;
    std::string name_;
    std::set<std::string> seen_;
};

json load_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw qseg::io_error("cannot open config file " + path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw qseg::argument_error("config: " + std::string(e.what()));
    }
}

// Pre-scan for --config so its values can seed the defaults before parsing.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Option bundles shared between subcommands
// ---------------------------------------------------------------------------

struct GenOpts {
    std::uint32_t width = 32;
    std::uint32_t height = 32;
    int q = 2;
    std::string pattern = "checkerboard";
    std::uint32_t tile = 8;
    std::vector<double> means; // empty: evenly spaced defaults
    std::string noise = "gaussian";
    double sigma = 25.0;
    double weibull_lambda = 1.0;
    double weibull_k = 1.5;
};

struct EmOpts {
    int q = 2;
    std::string scheme = "one_hot";
    std::string noise = "gaussian";
    std::string connectivity = "four";
    double lambda_p = -1.0; // < 0: per-Q default
    double lambda_a = 0.0;  // <= 0: auto
    double lambda_oh = 0.0; // <= 0: auto
    std::size_t samples = 100;
    std::uint32_t sweeps = 1000;
    double beta_start = 0.0; // both > 0: fixed annealing betas
    double beta_end = 0.0;
    std::string interp = "geometric";
    int epochs = 30;
    double delta = 5.0;
    int final_mult = 10;
    std::string init = "kmeans";
    double shadow_max = 7.0;
    double target_min = 20.0;
    std::string model; // explicit-init parameters (JSON file)
};

qseg::NoiseKind parse_kind(const std::string& s) {
    if (s == "gaussian") return qseg::NoiseKind::gaussian;
    if (s == "weibull") return qseg::NoiseKind::weibull;
    throw qseg::argument_error("unknown noise model \"" + s + "\" (gaussian|weibull)");
}

qseg::Scheme parse_scheme(const std::string& s) {
    if (s == "binary") return qseg::Scheme::binary;
    if (s == "one_hot") return qseg::Scheme::one_hot;
    throw qseg::argument_error("unknown scheme \"" + s + "\" (binary|one_hot)");
}

qseg::Connectivity parse_connectivity(const std::string& s) {
    if (s == "four") return qseg::Connectivity::four;
    if (s == "eight") return qseg::Connectivity::eight;
    throw qseg::argument_error("unknown connectivity \"" + s + "\" (four|eight)");
}

qseg::SyntheticSpec to_spec(const GenOpts& g, std::uint64_t seed) {
    qseg::SyntheticSpec s;
    s.width = g.width;
    s.height = g.height;
    s.q = g.q;
    if (g.pattern == "checkerboard")
        s.pattern = qseg::SyntheticSpec::Pattern::checkerboard;
    else if (g.pattern == "blobs")
        s.pattern = qseg::SyntheticSpec::Pattern::blobs;
    else
        throw qseg::argument_error("unknown pattern \"" + g.pattern + "\" (checkerboard|blobs)");
    s.tile = g.tile;
    s.class_means = g.means.empty() ? qseg::default_class_means(g.q) : g.means;
    s.noise = parse_kind(g.noise);
    s.sigma = g.sigma;
    s.weibull_lambda = g.weibull_lambda;
    s.weibull_k = g.weibull_k;
    s.seed = seed;
    return s;
}

qseg::EmConfig to_em_config(const EmOpts& o, std::uint64_t seed, unsigned threads) {
    qseg::EmConfig cfg;
    cfg.q = o.q;
    cfg.scheme = parse_scheme(o.scheme);
    cfg.kind = parse_kind(o.noise);
    cfg.connectivity = parse_connectivity(o.connectivity);
    cfg.lambda_p = o.lambda_p;
    if (o.lambda_a > 0.0) cfg.lambda_a_override = o.lambda_a;
    if (o.lambda_oh > 0.0) cfg.lambda_oh_override = o.lambda_oh;
    cfg.sampler.n_samples = o.samples;
    cfg.sampler.seed = seed;
    cfg.sampler.threads = threads;
    cfg.sampler.schedule.n_sweeps = o.sweeps;
    if (o.interp == "geometric")
        cfg.sampler.schedule.interpolation = qseg::AnnealSchedule::Interp::geometric;
    else if (o.interp == "linear")
        cfg.sampler.schedule.interpolation = qseg::AnnealSchedule::Interp::linear;
    else
        throw qseg::argument_error("unknown interpolation \"" + o.interp + "\" (geometric|linear)");
    if ((o.beta_start > 0.0) != (o.beta_end > 0.0))
        throw qseg::argument_error("--beta-start and --beta-end must be given together");
    if (o.beta_start > 0.0) {
        cfg.sampler.schedule.beta_start = o.beta_start;
        cfg.sampler.schedule.beta_end = o.beta_end;
        cfg.fixed_betas = true;
    }
    cfg.max_epochs = o.epochs;
    cfg.delta = o.delta;
    cfg.final_samples_multiplier = o.final_mult;
    if (o.init == "kmeans")
        cfg.init = qseg::EmConfig::Init::kmeans;
    else if (o.init == "threshold")
        cfg.init = qseg::EmConfig::Init::threshold;
    else if (o.init == "explicit")
        cfg.init = qseg::EmConfig::Init::explicit_model;
    else
        throw qseg::argument_error("unknown init \"" + o.init + "\" (kmeans|threshold|explicit)");
    cfg.shadow_max = o.shadow_max;
    cfg.target_min = o.target_min;
    if (cfg.init == qseg::EmConfig::Init::explicit_model) {
        if (o.model.empty()) throw qseg::argument_error("--init explicit requires --model");
        std::ifstream is(o.model, std::ios::binary);
        if (!is) throw qseg::io_error("cannot open model file " + o.model);
        json j;
        try {
            j = json::parse(is);
        } catch (const json::exception& e) {
            throw qseg::parse_error(o.model + ": " + e.what());
        }
        cfg.explicit_model = qseg::noise_model_from_json(j);
    } else if (!o.model.empty()) {
        throw qseg::argument_error("--model requires --init explicit");
    }
    return cfg;
}

void add_gen_flags(CLI::App* cmd, GenOpts& g) {
    cmd->add_option("--width", g.width, "image width");
    cmd->add_option("--height", g.height, "image height");
    cmd->add_option("--q", g.q, "number of classes");
    cmd->add_option("--pattern", g.pattern, "scene layout: checkerboard|blobs");
    cmd->add_option("--tile", g.tile, "checkerboard tile side");
    cmd->add_option("--means", g.means, "per-class mean intensities (default: evenly spaced)");
    cmd->add_option("--noise", g.noise, "noise model: gaussian|weibull");
    cmd->add_option("--sigma", g.sigma, "gaussian noise standard deviation");
    cmd->add_option("--weibull-lambda", g.weibull_lambda, "weibull speckle scale");
    cmd->add_option("--weibull-k", g.weibull_k, "weibull speckle shape");
}

// shared_instance: the subcommand also carries GenOpts flags, which own --q
// and --noise; the EmOpts copies are filled from them after parsing.
void add_em_flags(CLI::App* cmd, EmOpts& o, bool shared_instance = false) {
    if (!shared_instance) {
        cmd->add_option("--q", o.q, "number of classes");
        cmd->add_option("--noise", o.noise, "noise model: gaussian|weibull");
    }
    cmd->add_option("--scheme", o.scheme, "encoding: one_hot|binary (binary needs q=2)");
    cmd->add_option("--connectivity", o.connectivity, "neighborhood: four|eight");
    cmd->add_option("--lambda-p", o.lambda_p, "pairwise smoothness weight (<0: per-q default)");
    cmd->add_option("--lambda-a", o.lambda_a, "ancilla pinning weight (<=0: auto)");
    cmd->add_option("--lambda-oh", o.lambda_oh, "one-hot penalty weight (<=0: auto)");
    cmd->add_option("--samples", o.samples, "annealing samples per E-step");
    cmd->add_option("--sweeps", o.sweeps, "annealing sweeps per sample");
    cmd->add_option("--beta-start", o.beta_start, "fixed initial inverse temperature (default: auto per QUBO)");
    cmd->add_option("--beta-end", o.beta_end, "fixed final inverse temperature (default: auto per QUBO)");
    cmd->add_option("--interp", o.interp, "beta interpolation: geometric|linear");
    cmd->add_option("--epochs", o.epochs, "maximum EM epochs");
    cmd->add_option("--delta", o.delta, "EM convergence threshold on the energy change");
    cmd->add_option("--final-mult", o.final_mult, "sample multiplier for the final E-step");
    cmd->add_option("--init", o.init, "parameter initialization: kmeans|threshold|explicit");
    cmd->add_option("--shadow-max", o.shadow_max, "threshold init: darkest-class upper intensity");
    cmd->add_option("--target-min", o.target_min, "threshold init: brightest-class lower intensity");
    cmd->add_option("--model", o.model, "noise model JSON for --init explicit");
}

void overlay_gen(Section& s, GenOpts& g) {
    s.get("width", g.width);
    s.get("height", g.height);
    s.get("q", g.q);
    s.get("pattern", g.pattern);
    s.get("tile", g.tile);
    s.get("means", g.means);
    s.get("noise", g.noise);
    s.get("sigma", g.sigma);
    s.get("weibull_lambda", g.weibull_lambda);
    s.get("weibull_k", g.weibull_k);
}

void overlay_em(Section& s, EmOpts& o) {
    s.get("q", o.q);
    s.get("scheme", o.scheme);
    s.get("noise", o.noise);
    s.get("connectivity", o.connectivity);
    s.get("lambda_p", o.lambda_p);
    s.get("lambda_a", o.lambda_a);
    s.get("lambda_oh", o.lambda_oh);
    s.get("samples", o.samples);
    s.get("sweeps", o.sweeps);
    s.get("beta_start", o.beta_start);
    s.get("beta_end", o.beta_end);
    s.get("interp", o.interp);
    s.get("epochs", o.epochs);
    s.get("delta", o.delta);
    s.get("final_mult", o.final_mult);
    s.get("init", o.init);
    s.get("shadow_max", o.shadow_max);
    s.get("target_min", o.target_min);
    s.get("model", o.model);
}

std::string default_truth_path(const std::string& out) {
    std::filesystem::path p(out);
    p.replace_extension();
    return p.string() + ".truth.pgm";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw qseg::io_error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw qseg::io_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenerateCmd {
    GenOpts gen;
    std::string out;
    std::string truth_out; // default: <out>.truth.pgm

    int run(std::uint64_t seed) const {
        const qseg::GrayImage img = qseg::generate(to_spec(gen, seed));
        qseg::save_image(img, out, qseg::format_for_path(out));
        const std::string tpath = truth_out.empty() ? default_truth_path(out) : truth_out;
        qseg::save_labels(img.truth, img.width, img.height, img.truth_q, tpath);
        std::cout << "image  -> " << out << " (" << img.width << "x" << img.height << ", q=" << gen.q << ", "
                  << gen.noise << " noise)\n"
                  << "truth  -> " << tpath << "\n";
        return 0;
    }
};

struct SegmentCmd {
    EmOpts em;
    std::string in;
    std::string labels_out = "labels.pgm";
    std::string trace_out = "trace.json";
    std::string dump_qubo; // optional: write the theta^0 QUBO + layout here

    int run(std::uint64_t seed, unsigned jobs) const {
        const qseg::GrayImage img = qseg::load_image(in, qseg::format_for_path(in));
        const qseg::EmConfig cfg = to_em_config(em, seed, jobs);
        qseg::check_em_config(cfg);

        if (!dump_qubo.empty()) {
            const auto nbrs = qseg::make_neighbors(img.width, img.height, cfg.connectivity);
            const auto w = qseg::effective_weights(img.size(), cfg);
            const auto theta0 = qseg::initial_model(img, cfg);
            const auto built = cfg.scheme == qseg::Scheme::binary ? qseg::build_binary(img, theta0, nbrs, w)
                                                                  : qseg::build_qclass(img, theta0, nbrs, w);
            qseg::dump_qubo_with_layout(built.qubo, built.layout, dump_qubo);
            std::cout << "qubo   -> " << dump_qubo << " (" << built.layout.n_vars << " vars)\n";
        }

        const qseg::EmResult res = qseg::run_em(img, cfg);
        qseg::save_labels(res.final_labeling.labels, img.width, img.height, cfg.q, labels_out);

        json trace = qseg::em_trace_to_json(res);
        trace["seed"] = seed;
        const auto w = qseg::effective_weights(img.size(), cfg);
        trace["weights"] = {{"lambda_p", w.lambda_p}, {"lambda_a", w.lambda_a}, {"lambda_oh", w.lambda_oh}};
        trace["scheme"] = qseg::to_string(cfg.scheme);
        trace["q"] = cfg.q;
        write_text(trace_out, trace.dump(2) + "\n");

        for (std::size_t t = 0; t < res.epochs.size(); ++t) {
            const auto& ep = res.epochs[t];
            std::cout << "epoch " << (t + 1) << ": energy " << ep.best_energy << ", delta " << ep.delta
                      << ", violations " << ep.violations << ", " << ep.wall_ms << " ms\n";
        }
        std::cout << "final: energy " << res.final_best_energy << ", violations " << res.final_violations << " ("
                  << res.final_samples << " samples, " << res.final_wall_ms << " ms)\n"
                  << (res.converged ? "converged" : "stopped at epoch limit") << " after " << res.epochs.size()
                  << " epoch(s), total " << res.total_wall_ms << " ms\n"
                  << "labels -> " << labels_out << "\n"
                  << "trace  -> " << trace_out << "\n";
        return 0;
    }
};

struct EvaluateCmd {
    std::string pred;
    std::string truth;
    std::string out; // optional JSON report path

    int run() const {
        const auto [plabels, pq] = qseg::load_labels(pred);
        const auto [tlabels, tq] = qseg::load_labels(truth);
        if (plabels.size() != tlabels.size())
            throw qseg::argument_error("evaluate: label images differ in size (" + std::to_string(plabels.size()) +
                                       " vs " + std::to_string(tlabels.size()) + " pixels)");
        const qseg::AccuracyResult acc = qseg::accuracy(plabels, tlabels);
        json report{{"accuracy", acc.value},
                    {"mapping", acc.mapping},
                    {"n_pixels", plabels.size()},
                    {"pred", pred},
                    {"truth", truth}};
        const std::string text = report.dump(2) + "\n";
        std::cout << text;
        if (!out.empty()) write_text(out, text);
        return 0;
    }
};

struct DumpQuboCmd {
    std::string in;
    std::string model;
    std::string scheme = "one_hot";
    std::string connectivity = "four";
    double lambda_p = -1.0;
    double lambda_a = 0.0;
    double lambda_oh = 0.0;
    std::string out = "problem.qubo";

    int run() const {
        const qseg::GrayImage img = qseg::load_image(in, qseg::format_for_path(in));
        std::ifstream is(model, std::ios::binary);
        if (!is) throw qseg::io_error("cannot open model file " + model);
        json j;
        try {
            j = json::parse(is);
        } catch (const json::exception& e) {
            throw qseg::parse_error(model + ": " + e.what());
        }
        const qseg::NoiseModel m = qseg::noise_model_from_json(j);
        const int q = static_cast<int>(m.n_classes());

        qseg::EmConfig cfg; // reuse the weight plumbing
        cfg.q = q;
        cfg.scheme = parse_scheme(scheme);
        cfg.lambda_p = lambda_p;
        if (lambda_a > 0.0) cfg.lambda_a_override = lambda_a;
        if (lambda_oh > 0.0) cfg.lambda_oh_override = lambda_oh;
        if (cfg.scheme == qseg::Scheme::binary && q != 2)
            throw qseg::argument_error("binary scheme requires a 2-class model, got " + std::to_string(q));

        const auto nbrs = qseg::make_neighbors(img.width, img.height, parse_connectivity(connectivity));
        const auto w = qseg::effective_weights(img.size(), cfg);
        const auto built = cfg.scheme == qseg::Scheme::binary ? qseg::build_binary(img, m, nbrs, w)
                                                              : qseg::build_qclass(img, m, nbrs, w);
        qseg::dump_qubo_with_layout(built.qubo, built.layout, out);
        std::cout << "qubo   -> " << out << " (" << built.layout.n_vars << " vars)\n"
                  << "layout -> " << out << ".layout.json\n";
        return 0;
    }
};

struct SweepCmd {
    std::string axis;
    std::vector<double> values;
    int repeats = 5;
    GenOpts gen{.width = 20, .height = 20, .q = 4, .sigma = 50.0};
    EmOpts em{.q = 4};
    std::string out = "sweep.csv";

    struct Row {
        double axis_value = 0;
        int repeat = 0;
        std::uint64_t seed = 0;
        double accuracy = 0;
        double violation_fraction = 0;
        double best_energy = 0;
        double wall_ms = 0;
    };

    int run(std::uint64_t seed, unsigned jobs) const {
        if (axis != "lambda_p" && axis != "lambda_oh" && axis != "sweeps")
            throw qseg::argument_error("unknown sweep axis \"" + axis + "\" (lambda_p|lambda_oh|sweeps)");
        if (values.empty()) throw qseg::argument_error("sweep: need at least one --values entry");
        if (repeats < 1) throw qseg::argument_error("sweep: repeats must be >= 1");
        if (axis == "lambda_oh" && em.scheme != "one_hot")
            throw qseg::argument_error("lambda_oh sweep requires the one_hot scheme");
        if (axis == "sweeps")
            for (double v : values)
                if (v < 1.0 || v != std::floor(v))
                    throw qseg::argument_error("sweeps axis values must be positive integers");
        if (gen.q != em.q) throw qseg::argument_error("sweep: instance and model class counts differ");

        // Validate the non-swept knobs before spending any compute.
        qseg::check_em_config(to_em_config(em, seed, 1));
        (void)to_spec(gen, seed);

        const std::size_t n_rows = values.size() * std::size_t(repeats);
        std::vector<Row> rows(n_rows);
        qseg::detail::parallel_for(n_rows, jobs, [&](std::size_t idx) {
            const std::size_t vi = idx / std::size_t(repeats);
            const int rep = static_cast<int>(idx % std::size_t(repeats));
            const double v = values[vi];
            // One deterministic stream per row: instance and solver both
            // derive from it, so rows are independent of execution order.
            const std::uint64_t row_seed = qseg::rng_stream(seed, 0x500000 + idx).next_u64();

            const qseg::GrayImage img = qseg::generate(to_spec(gen, row_seed));
            qseg::EmConfig cfg = to_em_config(em, row_seed, 1);
            if (axis == "lambda_p")
                cfg.lambda_p = v;
            else if (axis == "lambda_oh")
                cfg.lambda_oh_override = v;
            else
                cfg.sampler.schedule.n_sweeps = static_cast<std::uint32_t>(v);

            const auto t0 = std::chrono::steady_clock::now();
            const qseg::EmResult res = qseg::run_em(img, cfg);
            const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

            Row& r = rows[idx];
            r.axis_value = v;
            r.repeat = rep;
            r.seed = row_seed;
            r.accuracy = qseg::accuracy(res.final_labeling.labels, img.truth).value;
            r.violation_fraction = double(res.final_violations) / double(img.size());
            r.best_energy = res.final_best_energy;
            r.wall_ms = wall;
        });

        std::ostringstream csv;
        csv << "axis_value,repeat,seed,accuracy,violation_fraction,best_energy,wall_ms\n";
        for (const Row& r : rows)
            csv << qseg::detail::format_double(r.axis_value) << ',' << r.repeat << ',' << r.seed << ','
                << qseg::detail::format_double(r.accuracy) << ',' << qseg::detail::format_double(r.violation_fraction)
                << ',' << qseg::detail::format_double(r.best_energy) << ',' << qseg::detail::format_double(r.wall_ms)
                << '\n';
        write_text(out, csv.str());
        std::cout << "sweep " << axis << " over " << values.size() << " value(s) x " << repeats << " repeat(s) -> "
                  << out << "\n";
        return 0;
    }
};

int dispatch(int argc, char** argv) {
    CLI::App app{"MRF image segmentation compiled to QUBO and solved by simulated annealing inside an EM loop"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 1;
    unsigned jobs = 0;
    std::string config_path;
    app.add_option("--seed", seed, "base RNG seed (all randomness derives from it)");
    app.add_option("--jobs", jobs, "worker threads (0 = hardware concurrency)");
    app.add_option("--config", config_path, "JSON config file; flags override its values");

    GenerateCmd generate;
    SegmentCmd segment;
    EvaluateCmd evaluate;
    SweepCmd sweep;
    DumpQuboCmd dump;

    // Config file first: it supplies defaults, flags override.
    json cfg;
    const std::string cfg_path = find_config_arg(argc, argv);
    if (!cfg_path.empty()) {
        cfg = load_config(cfg_path);
        if (!cfg.is_object()) throw qseg::argument_error("config: top level must be a JSON object");
        static const std::set<std::string> sections{"seed", "jobs", "generate", "segment",
                                                    "evaluate", "sweep", "dump_qubo"};
        for (const auto& [k, v] : cfg.items())
            if (!sections.count(k)) throw qseg::argument_error("config: unknown key \"" + k + "\"");
        Section top(&cfg, "");
        top.get("seed", seed);
        top.get("jobs", jobs);

        Section g(cfg.contains("generate") ? &cfg["generate"] : nullptr, "generate");
        overlay_gen(g, generate.gen);
        g.get("out", generate.out);
        g.get("truth_out", generate.truth_out);
        g.finish();

        Section s(cfg.contains("segment") ? &cfg["segment"] : nullptr, "segment");
        overlay_em(s, segment.em);
        s.get("in", segment.in);
        s.get("labels_out", segment.labels_out);
        s.get("trace_out", segment.trace_out);
        s.get("dump_qubo", segment.dump_qubo);
        s.finish();

        Section e(cfg.contains("evaluate") ? &cfg["evaluate"] : nullptr, "evaluate");
        e.get("pred", evaluate.pred);
        e.get("truth", evaluate.truth);
        e.get("out", evaluate.out);
        e.finish();

        Section w(cfg.contains("sweep") ? &cfg["sweep"] : nullptr, "sweep");
        w.get("axis", sweep.axis);
        w.get("values", sweep.values);
        w.get("repeats", sweep.repeats);
        overlay_gen(w, sweep.gen);
        overlay_em(w, sweep.em);
        w.get("out", sweep.out);
        w.finish();

        Section d(cfg.contains("dump_qubo") ? &cfg["dump_qubo"] : nullptr, "dump_qubo");
        d.get("in", dump.in);
        d.get("model", dump.model);
        d.get("scheme", dump.scheme);
        d.get("connectivity", dump.connectivity);
        d.get("lambda_p", dump.lambda_p);
        d.get("lambda_a", dump.lambda_a);
        d.get("lambda_oh", dump.lambda_oh);
        d.get("out", dump.out);
        d.finish();
    }

    auto* cg = app.add_subcommand("generate", "write a synthetic noisy scene plus its ground-truth labels");
    add_gen_flags(cg, generate.gen);
    auto* gout = cg->add_option("--out", generate.out, "output image path (.pgm or .png)");
    if (generate.out.empty()) gout->required();
    cg->add_option("--truth-out", generate.truth_out, "ground-truth label image path (default <out>.truth.pgm)");

    auto* cs = app.add_subcommand("segment", "segment a grayscale image");
    auto* sin = cs->add_option("input", segment.in, "input image (.pgm or .png)");
    if (segment.in.empty()) sin->required();
    add_em_flags(cs, segment.em);
    cs->add_option("--labels-out", segment.labels_out, "label image output path");
    cs->add_option("--trace-out", segment.trace_out, "JSON trace output path");
    cs->add_option("--dump-qubo", segment.dump_qubo, "also write the initial QUBO + layout to this path");

    auto* ce = app.add_subcommand("evaluate", "score predicted labels against ground truth");
    auto* ep = ce->add_option("--pred", evaluate.pred, "predicted label image");
    auto* et = ce->add_option("--truth", evaluate.truth, "ground-truth label image");
    if (evaluate.pred.empty()) ep->required();
    if (evaluate.truth.empty()) et->required();
    ce->add_option("--out", evaluate.out, "also write the JSON report here");

    auto* cw = app.add_subcommand("sweep", "run a parameter sweep on synthetic instances, emit CSV");
    auto* wa = cw->add_option("--axis", sweep.axis, "swept parameter: lambda_p|lambda_oh|sweeps");
    auto* wv = cw->add_option("--values", sweep.values, "axis values");
    if (sweep.axis.empty()) wa->required();
    if (sweep.values.empty()) wv->required();
    cw->add_option("--repeats", sweep.repeats, "instances per value");
    add_gen_flags(cw, sweep.gen);
    add_em_flags(cw, sweep.em, true);
    cw->add_option("--out", sweep.out, "CSV output path");

    auto* cd = app.add_subcommand("dump-qubo", "compile an image + noise model to a QUBO file without solving");
    auto* din = cd->add_option("input", dump.in, "input image (.pgm or .png)");
    auto* dm = cd->add_option("--model", dump.model, "noise model JSON");
    if (dump.in.empty()) din->required();
    if (dump.model.empty()) dm->required();
    cd->add_option("--scheme", dump.scheme, "encoding: one_hot|binary");
    cd->add_option("--connectivity", dump.connectivity, "neighborhood: four|eight");
    cd->add_option("--lambda-p", dump.lambda_p, "pairwise smoothness weight (<0: per-q default)");
    cd->add_option("--lambda-a", dump.lambda_a, "ancilla pinning weight (<=0: auto)");
    cd->add_option("--lambda-oh", dump.lambda_oh, "one-hot penalty weight (<=0: auto)");
    cd->add_option("--out", dump.out, "QUBO output path (layout goes to <out>.layout.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // sweep shares the instance's class count and noise kind with the model
    if (*cw) {
        sweep.em.q = sweep.gen.q;
        sweep.em.noise = sweep.gen.noise;
    }

    if (*cg) return generate.run(seed);
    if (*cs) return segment.run(seed, jobs);
    if (*ce) return evaluate.run();
    if (*cw) return sweep.run(seed, jobs);
    if (*cd) return dump.run();
    return 2; // unreachable: require_subcommand
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const std::invalid_argument& e) { // argument_error, capacity_error
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const qseg::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const qseg::parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const qseg::model_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
