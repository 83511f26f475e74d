// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Indented lines are supporting measurements.

#include "emdtrade/emdtrade.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace emdtrade;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("emdtrade_acc_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

pipeline::ExperimentConfig config_from(const std::string& text, const fs::path& dir) {
    const auto path = dir / "experiment.cfg";
    std::ofstream(path) << text;
    auto kv = KeyValueConfig::load(path.string());
    return pipeline::ExperimentConfig::from_config(kv);
}

std::string write_synth(const fs::path& dir, std::size_t length, std::uint64_t seed, double signal) {
    synth::SynthSpec s;
    s.length = length;
    s.seed = seed;
    s.signal = signal;
    s.market_id = "S";
    const auto path = (dir / ("synth_" + std::to_string(seed) + "_" + format_number(signal) + ".csv")).string();
    write_candles(synth::generate(s).candles, path);
    return path;
}

// 1 ------------------------------------------------------------------------
Outcome reconstruction() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto x = oracle::random_walk(512, seed);
        const auto d = emd::decompose(x);
        worst = std::max(worst, max_abs_diff(d.reconstruct(), x) / series_range(x));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-8 && secs < 30.0, fmt("max relative error %.3g, %.1f s", worst, secs)};
}

// 2 ------------------------------------------------------------------------
Outcome imf_validity() {
    std::size_t total = 0, valid = 0;
    const std::size_t first = 26, last = 512 - 27;  // interior 90%
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto d = emd::decompose(oracle::random_walk(512, seed));
        for (const auto& imf : d.imfs) {
            const auto ext = static_cast<long>(emd::find_extrema(imf, first, last).count());
            const auto zc = static_cast<long>(emd::count_zero_crossings(imf, first, last));
            ++total;
            valid += std::abs(ext - zc) <= 1;
        }
    }
    const double share = static_cast<double>(valid) / static_cast<double>(total);
    return {share >= 0.95, fmt("%.0f of %.0f IMFs valid (%.1f%%)", double(valid), double(total), 100 * share)};
}

// 3 ------------------------------------------------------------------------
Outcome two_tone() {
    const std::size_t n = 512;
    std::vector<double> x(n), fast(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(n);
        fast[k] = std::sin(2 * std::numbers::pi * 8 * t);
        x[k] = fast[k] + 0.5 * std::sin(2 * std::numbers::pi * t);
    }
    const auto d = emd::decompose(x);
    if (d.imfs.empty()) return {false, "no IMFs extracted"};
    const double r = oracle::correlation(d.imfs[0], fast, n / 10, n - n / 10);
    return {r > 0.95, fmt("interior correlation %.6f", r)};
}

// 4 ------------------------------------------------------------------------
Outcome cutoff_algebra() {
    bool ok = true;
    double worst = 0.0;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    for (std::size_t J = 1; J <= 12; ++J) {
        const auto c = emd::adaptive_cutoffs(J);
        auto expect = [&](long off) { return static_cast<std::size_t>(std::max(1L, static_cast<long>(J) - off)); };
        ok = ok && c.r1 == expect(6) && c.r2 == expect(4) && c.r3 == expect(2);
        emd::Decomposition d;
        std::vector<double> x(256, 0.0);
        d.residual.resize(256);
        for (std::size_t j = 0; j < J; ++j) {
            std::vector<double> imf(256);
            for (auto& v : imf) v = z(rng);
            d.imfs.push_back(imf);
        }
        for (std::size_t t = 0; t < 256; ++t) {
            d.residual[t] = 0.01 * static_cast<double>(t);
            x[t] = d.residual[t];
            for (const auto& imf : d.imfs) x[t] += imf[t];
        }
        const auto cs = emd::assemble_components(d);
        std::vector<double> sum(256);
        for (std::size_t t = 0; t < 256; ++t) sum[t] = cs.low[t] + cs.trend[t];
        worst = std::max(worst, max_abs_diff(sum, x) / series_range(x));
    }
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto x = oracle::random_walk(512, seed);
        const auto cs = emd::assemble_components(emd::decompose(x));
        std::vector<double> sum(x.size());
        for (std::size_t t = 0; t < x.size(); ++t) sum[t] = cs.low[t] + cs.trend[t];
        worst = std::max(worst, max_abs_diff(sum, x) / series_range(x));
    }
    return {ok && worst <= 1e-8,
            std::string("cutoffs ") + (ok ? "exact" : "WRONG") + fmt("; worst low+trend relative error %.3g", worst)};
}

// 5 ------------------------------------------------------------------------
RowMatrix two_blobs(std::size_t n_each, std::size_t d, double separation, std::uint64_t seed) {
    auto a = oracle::gaussian_rows(n_each, d, seed, -separation / 2.0 / std::sqrt(double(d)));
    auto b = oracle::gaussian_rows(n_each, d, seed + 1000, separation / 2.0 / std::sqrt(double(d)));
    RowMatrix m(2 * n_each, d);
    for (std::size_t r = 0; r < n_each; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            m(2 * r, c) = a(r, c);
            m(2 * r + 1, c) = b(r, c);
        }
    return m;
}

Outcome gmm_checks() {
    std::size_t fits = 0, monotone = 0;
    auto track = [&](const gmm::GmmModel& m) {
        ++fits;
        bool up = true;
        for (std::size_t i = 1; i < m.ll_trace.size(); ++i) up = up && m.ll_trace[i] - m.ll_trace[i - 1] >= -1e-9;
        monotone += up;
    };
    int right_one = 0, right_two = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        gmm::GmmConfig cfg;
        cfg.seed = seed;
        cfg.restarts = 4;
        const auto one = oracle::gaussian_rows(600, 2, seed);
        const auto two = two_blobs(300, 2, 6.0, seed);
        const auto s1 = gmm::select_g_bic(one, cfg);
        const auto s2 = gmm::select_g_bic(two, cfg);
        right_one += s1.best.components() == 1;
        right_two += s2.best.components() == 2;
        for (int G = 1; G <= 4; ++G) {
            for (const auto* X : {&one, &two}) {
                try {
                    track(gmm::fit_gmm(*X, G, cfg));
                } catch (const gmm::FitError&) {
                }
            }
        }
    }

    double closed_form_err = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto X = oracle::gaussian_rows(300, 3, seed);
        for (std::size_t r = 0; r < X.rows(); ++r) X(r, 1) += 0.5 * X(r, 0);
        gmm::GmmConfig cfg;
        cfg.seed = seed;
        const auto m = gmm::fit_gmm(X, 1, cfg);
        const std::size_t n = X.rows(), d = X.cols();
        std::vector<double> mu(d, 0.0), S(d * d, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) mu[c] += X(r, c) / double(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) S[i * d + j] += (X(r, i) - mu[i]) * (X(r, j) - mu[j]) / double(n);
        double tr = 0;
        for (std::size_t i = 0; i < d; ++i) tr += S[i * d + i];
        for (std::size_t i = 0; i < d; ++i) S[i * d + i] += cfg.ridge * tr / double(d);
        for (std::size_t i = 0; i < d; ++i) {
            closed_form_err = std::max(closed_form_err, std::abs(m.means[0](long(i)) - mu[i]));
            for (std::size_t j = 0; j < d; ++j)
                closed_form_err = std::max(closed_form_err, std::abs(m.covariances[0](long(i), long(j)) - S[i * d + j]));
        }
        closed_form_err = std::max(closed_form_err, std::abs(m.log_likelihood - oracle::gaussian_loglik(X, mu, S)) /
                                                        std::max(1.0, std::abs(m.log_likelihood)));
    }
    const bool pass = monotone == fits && right_one >= 18 && right_two >= 18 && closed_form_err <= 1e-8;
    std::ostringstream s;
    s << "monotone " << monotone << "/" << fits << " fits; BIC G=1 " << right_one << "/20, G=2 " << right_two
      << "/20; G=1 closed-form error " << fmt("%.3g", closed_form_err);
    return {pass, s.str()};
}

// 6 ------------------------------------------------------------------------
Outcome knn_oracle() {
    std::mt19937_64 rng(606);
    std::size_t queries = 0, agree = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = 2 + rng() % 99, d = 1 + rng() % 8;  // train needs >= 2 rows
        RowMatrix X(n, d);
        std::vector<DecisionLabel> y(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) X(r, c) = double(int(rng() % 5) - 2);
            y[r] = static_cast<DecisionLabel>(rng() % 3);
        }
        learners::LearnerSpec spec;
        spec.kind = learners::LearnerKind::Knn;
        spec.knn.k = 1 + rng() % 9;
        const auto model = learners::train(spec, X, y);
        RowMatrix Q(10, d);
        for (std::size_t r = 0; r < 10; ++r)
            for (std::size_t c = 0; c < d; ++c) Q(r, c) = double(int(rng() % 7) - 3) * 0.5;
        const auto pred = learners::predict(model, Q);
        for (std::size_t r = 0; r < 10; ++r) {
            ++queries;
            agree += pred[r] == oracle::knn(X, y, spec.knn.k, std::vector<double>(Q.row(r).begin(), Q.row(r).end()));
        }
    }
    return {agree == queries, fmt("%.0f/%.0f queries agree", double(agree), double(queries))};
}

// 7 ------------------------------------------------------------------------
Outcome apc_identities() {
    using D = DecisionLabel;
    bool hand = apc(std::vector{D::Buy, D::Sell}, std::vector{0.01, -0.02}).apc == 0.01 + 0.02;
    hand = hand && apc(std::vector{D::Hold, D::Hold, D::Hold}, std::vector{0.3, -0.1, 0.2}).apc == 0.0;
    hand = hand && apc(std::vector{D::Buy}, std::vector{-0.05}).apc == -0.05;

    std::mt19937_64 rng(7);
    std::normal_distribution<double> z(0.0, 0.02);
    std::size_t anti = 0, bounded = 0, matches = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 1 + rng() % 200;
        std::vector<double> w(n);
        std::vector<D> d(n), flipped(n);
        double bound = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            w[t] = z(rng);
            bound += std::abs(w[t]);
            d[t] = static_cast<D>(rng() % 3);
            flipped[t] = d[t] == D::Buy ? D::Sell : d[t] == D::Sell ? D::Buy : D::Hold;
        }
        const double a = apc(d, w).apc;
        anti += apc(flipped, w).apc == -a;
        bounded += a <= bound + 1e-15;
        matches += std::abs(a - oracle::apc(d, w)) <= 1e-15 * std::max(1.0, bound);
    }
    std::ostringstream s;
    s << "hand examples " << (hand ? "exact" : "WRONG") << "; antisymmetry " << anti << "/1000; bound " << bounded
      << "/1000; oracle " << matches << "/1000";
    return {hand && anti == 1000 && bounded == 1000 && matches == 1000, s.str()};
}

// 8 ------------------------------------------------------------------------
Outcome baseline_contains_zero() {
    int contains = 0;
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        std::mt19937_64 rng(8000 + rep);
        std::normal_distribution<double> z(0.0, 0.01);
        std::vector<double> w(500);
        for (auto& v : w) v = z(rng);
        const auto b = baseline_band(w, 1000, derive_seed(8, {"band", std::to_string(rep)}));
        contains += b.p2_5 <= 0.0 && 0.0 <= b.p97_5;
    }
    return {contains >= 95, fmt("band contains 0 in %.0f/100 repetitions", contains)};
}

// 9 ------------------------------------------------------------------------
struct PatternCount {
    int planted_hits = 0;  // seeds where RF/GB on high or medium beat p97.5
    int null_hits = 0;     // seeds where any learner beat p97.5
};

PatternCount pattern_run(const fs::path& dir, const std::string& flags) {
    PatternCount pc;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (double signal : {1.0, 0.0}) {
            const auto market = write_synth(dir, 3000, seed, signal);
            const auto cfg = config_from("markets = S\nmarket.S.path = " + market + "\nseed = " + std::to_string(seed) +
                                             "\ngmm.enabled = false\nlearners = knn, random_forest, gradient_boost\n"
                                             "test_fractions = 0.3\n" + flags,
                                         dir);
            const auto rep = pipeline::run_experiment(cfg);
            bool hit = false;
            for (const auto& r : rep.rows) {
                if (!r.beats_p97_5()) continue;
                if (signal == 0.0) hit = true;
                const bool ensemble = r.learner != learners::LearnerKind::Knn;
                const bool stochastic = r.source == pipeline::Source::High || r.source == pipeline::Source::Medium;
                if (ensemble && stochastic) hit = true;
            }
            (signal > 0.0 ? pc.planted_hits : pc.null_hits) += hit;
        }
    }
    return pc;
}

Outcome planted_pattern() {
    synth::SynthSpec spec;
    const auto b = synth::bayes_summary(spec);
    std::printf("    planted regime: trigger probability %.4f, Bayes APC per step %.6f (> 0)\n", b.pi, b.apc_per_step);
    const auto dir = scratch("pattern");
    const auto main = pattern_run(dir, "");
    const auto causal = pattern_run(dir, "flags.causal_emd = true\nflags.causal_thresholds = true\n");
    std::printf("    causal EMD + causal thresholds: planted %d/10, null %d/10\n", causal.planted_hits, causal.null_hits);
    std::ostringstream s;
    s << "default flags: planted " << main.planted_hits << "/10 (need >= 8), null " << main.null_hits
      << "/10 (need <= 2)";
    return {b.apc_per_step > 0.0 && main.planted_hits >= 8 && main.null_hits <= 2, s.str()};
}

// 10 -----------------------------------------------------------------------
Outcome determinism() {
    const auto dir = scratch("determinism");
    const auto market = write_synth(dir, 5000, 10, 1.0);
    const auto cfg = config_from("markets = S\nmarket.S.path = " + market +
                                     "\nseed = 10\ngmm.enabled = false\nlearners = knn, random_forest, gradient_boost\n"
                                     "test_fractions = 0.2, 0.3, 0.4\n",
                                 dir);
    std::vector<std::string> bodies;
    double slowest = 0.0;
    std::size_t rows = 0;
    for (std::size_t jobs : {1u, 1u, 4u}) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto rep = pipeline::run_experiment(cfg, jobs);
        const auto out = dir / ("out" + std::to_string(bodies.size()));
        pipeline::emit_report(rep, out.string());
        slowest = std::max(slowest, seconds_since(t0));
        rows = rep.rows.size();
        bodies.push_back(slurp(out / "report.csv") + slurp(out / "figure_S.csv"));
    }
    const bool same = bodies[0] == bodies[1] && bodies[0] == bodies[2];
    std::ostringstream s;
    s << rows << " rows; serial/serial/parallel bodies " << (same ? "identical" : "DIFFER") << "; slowest run "
      << fmt("%.1f s", slowest);
    return {same && rows == 45 && slowest < 300.0, s.str()};
}

// 11 -----------------------------------------------------------------------
Outcome leakage_sentinel() {
    const auto dir = scratch("sentinel");
    const auto market = write_synth(dir, 1500, 11, 1.0);
    auto series = load_candles(market, "S");
    const std::size_t keep = 1200;
    const std::string base = "markets = S\nmarket.S.path = " + market + "\nmarket.S.end_timestamp = " +
                             std::to_string(series.candles[keep - 1].timestamp) +
                             "\nseed = 11\ngmm.g_max = 3\ngmm.restarts = 3\ngmm.include_unfiltered = true\n"
                             "learners = knn, random_forest, gradient_boost\nrandom_forest.n_trees = 100\n"
                             "gradient_boost.rounds = 50\ntest_fractions = 0.2, 0.3, 0.4\n";
    auto body = [&](const std::string& extra) {
        const auto rep = pipeline::run_experiment(config_from(base + extra, dir));
        std::ostringstream s;
        pipeline::write_report_csv(rep.rows, s);
        return std::make_pair(s.str(), rep);
    };
    const auto clean = body("").first;
    for (std::size_t i = keep; i < series.size(); ++i) {
        auto& c = series.candles[i];
        c.open = c.close = 1e5 + 1e3 * static_cast<double>(i % 7);
        c.high = 2e5;
        c.low = 1.0;
        c.volume = 0.0;
    }
    write_candles(series, market);
    const bool unchanged = body("").first == clean;

    const auto [text, causal] =
        body("flags.causal_emd = true\nflags.causal_thresholds = true\nflags.causal_gmm = true\n");
    std::size_t scored = 0;
    for (const auto& r : causal.rows) scored += !r.skipped();
    const bool mode = causal.meta["emd_mode"] == "CAUSAL" && causal.meta["flags"]["causal_gmm"] == true &&
                      causal.meta["flags"]["causal_thresholds"] == true;
    std::ostringstream s;
    s << "poisoned report " << (unchanged ? "unchanged" : "CHANGED") << "; causal run " << causal.rows.size()
      << " rows (" << scored << " scored), metadata emd_mode=" << causal.meta["emd_mode"].get<std::string>();
    return {unchanged && mode && scored > 0, s.str()};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"EMD reconstruction", reconstruction},
        {"IMF validity", imf_validity},
        {"two-tone separation", two_tone},
        {"cutoff algebra", cutoff_algebra},
        {"GMM monotonicity, BIC and closed form", gmm_checks},
        {"KNN oracle equivalence", knn_oracle},
        {"APC identities", apc_identities},
        {"baseline band", baseline_contains_zero},
        {"planted-regime pattern", planted_pattern},
        {"determinism", determinism},
        {"leakage sentinel", leakage_sentinel},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
