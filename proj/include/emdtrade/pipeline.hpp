#pragma once

// Experiment grid: market x partition x source x learner x test fraction.
//
// Per market the candles are labeled and windowed once per labeling context
// (one shared context, or one per test fraction when thresholds or the GMM
// must not see the test period). Each context is partitioned by the GMM,
// each partition is decomposed column by column, and every grid cell trains
// and scores one learner on one source matrix.

#include "emdtrade/backtest.hpp"
#include "emdtrade/common.hpp"
#include "emdtrade/config.hpp"
#include "emdtrade/emd.hpp"
#include "emdtrade/features.hpp"
#include "emdtrade/gmm.hpp"
#include "emdtrade/learners.hpp"
#include "emdtrade/market_data.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace emdtrade::pipeline {

inline constexpr std::string_view kVersion = "1.0.0";

enum class Source { Raw, High, Medium, Low, Trend };

inline constexpr std::array<Source, 5> kSources{Source::Raw, Source::High, Source::Medium, Source::Low, Source::Trend};

constexpr std::string_view source_name(Source s) {
    switch (s) {
        case Source::Raw: return "raw";
        case Source::High: return "high";
        case Source::Medium: return "medium";
        case Source::Low: return "low";
        case Source::Trend: return "trend";
    }
    return "?";
}

inline std::optional<Source> parse_source(std::string_view s) {
    for (auto src : kSources)
        if (source_name(src) == s) return src;
    return std::nullopt;
}

inline constexpr int kAllRows = -1;  // cluster id of the unfiltered partition

inline std::string cluster_name(int cluster) { return cluster == kAllRows ? "all" : std::to_string(cluster); }

inline std::string fraction_name(double f) { return format_number(f); }

struct MarketSpec {
    std::string id;
    std::string path;
    std::optional<std::int64_t> end_timestamp;  // candles after this are ignored
};

struct Flags {
    bool causal_thresholds = false;
    bool causal_gmm = false;
    bool causal_emd = false;
    bool include_window_end_label = false;
    bool trend_includes_residual = true;

    bool per_fraction_context() const { return causal_thresholds || causal_gmm; }
};

struct ExperimentConfig {
    std::vector<MarketSpec> markets;
    std::size_t window = 15;
    double quantile = 0.035;
    bool gmm_enabled = true;
    bool include_unfiltered = false;
    gmm::GmmConfig gmm;
    emd::EmdConfig emd;
    std::size_t causal_window = 128;
    std::vector<learners::LearnerSpec> learners;
    std::vector<double> test_fractions{0.2, 0.3, 0.4};
    std::size_t baseline_replicates = 1000;
    double cost = 0.0;
    std::uint64_t seed = 0;
    Flags flags;
    std::map<std::string, std::string> echo;  // effective key/value pairs

    void validate() const {
        if (markets.empty()) throw ConfigError("config: markets must not be empty");
        if (learners.empty()) throw ConfigError("config: learners must not be empty");
        if (test_fractions.empty()) throw ConfigError("config: test_fractions must not be empty");
        std::set<std::string> ids;
        for (const auto& m : markets) {
            if (m.id.empty() || m.id.find_first_of(",=/\\ ") != std::string::npos)
                throw ConfigError("config: invalid market id '" + m.id + "'");
            if (!ids.insert(m.id).second) throw ConfigError("config: duplicate market '" + m.id + "'");
        }
        std::set<learners::LearnerKind> kinds;
        for (const auto& l : learners)
            if (!kinds.insert(l.kind).second)
                throw ConfigError("config: learner '" + std::string(learners::kind_name(l.kind)) + "' listed twice");
        std::set<std::string> fr;
        for (double f : test_fractions) {
            if (!(f > 0.0 && f < 1.0)) throw ConfigError("config: test fraction " + format_number(f) + " outside (0, 1)");
            if (!fr.insert(fraction_name(f)).second) throw ConfigError("config: duplicate test fraction");
        }
        if (window < 3) throw ConfigError("config: window must be >= 3");
        if (!(quantile > 0.0 && quantile < 0.5)) throw ConfigError("config: quantile must lie in (0, 0.5)");
        if (baseline_replicates < 100) throw ConfigError("config: baseline.replicates must be >= 100");
        if (!(cost >= 0.0)) throw ConfigError("config: backtest.cost must be >= 0");
        if (causal_window < emd::kMinDecomposeLength) throw ConfigError("config: emd.causal_window must be >= 8");
        try {
            gmm.validate();
            emd.validate();
            for (const auto& l : learners) l.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    /// Consumes every recognised key; anything left over is an error.
    static ExperimentConfig from_config(KeyValueConfig& kv) {
        ExperimentConfig c;
        for (const auto& id : kv.get_list("markets", {})) {
            MarketSpec m;
            m.id = id;
            m.path = kv.resolve_path(kv.require_string("market." + id + ".path"));
            if (kv.has("market." + id + ".end_timestamp"))
                m.end_timestamp = kv.get_int("market." + id + ".end_timestamp", 0);
            c.markets.push_back(std::move(m));
        }
        c.window = static_cast<std::size_t>(positive(kv, "window", 15));
        c.quantile = kv.get_double("quantile", c.quantile);
        c.seed = kv.get_uint("seed", c.seed);
        c.test_fractions = kv.get_double_list("test_fractions", c.test_fractions);
        c.baseline_replicates = static_cast<std::size_t>(positive(kv, "baseline.replicates", 1000));
        c.cost = kv.get_double("backtest.cost", c.cost);

        learners::LearnerSpec base;
        base.knn.k = static_cast<std::size_t>(positive(kv, "knn.k", 5));
        base.forest.n_trees = static_cast<std::size_t>(positive(kv, "random_forest.n_trees", 300));
        base.forest.mtry = static_cast<std::size_t>(non_negative(kv, "random_forest.mtry", 0));
        base.forest.min_leaf = static_cast<std::size_t>(positive(kv, "random_forest.min_leaf", 1));
        base.forest.max_depth = static_cast<std::size_t>(non_negative(kv, "random_forest.max_depth", 0));
        base.boost.rounds = static_cast<std::size_t>(non_negative(kv, "gradient_boost.rounds", 200));
        base.boost.learning_rate = kv.get_double("gradient_boost.learning_rate", 0.1);
        base.boost.max_depth = static_cast<std::size_t>(positive(kv, "gradient_boost.max_depth", 3));
        base.boost.subsample = kv.get_double("gradient_boost.subsample", 1.0);
        for (const auto& name : kv.get_list("learners", {"knn", "random_forest", "gradient_boost"})) {
            auto kind = learners::parse_kind(name);
            if (!kind) throw ConfigError("config: unknown learner '" + name + "'");
            auto spec = base;
            spec.kind = *kind;
            c.learners.push_back(spec);
        }

        c.gmm_enabled = kv.get_bool("gmm.enabled", c.gmm_enabled);
        c.include_unfiltered = kv.get_bool("gmm.include_unfiltered", c.include_unfiltered);
        c.gmm.g_min = static_cast<int>(positive(kv, "gmm.g_min", c.gmm.g_min));
        c.gmm.g_max = static_cast<int>(positive(kv, "gmm.g_max", c.gmm.g_max));
        c.gmm.restarts = static_cast<int>(positive(kv, "gmm.restarts", c.gmm.restarts));
        c.gmm.max_iters = static_cast<int>(positive(kv, "gmm.max_iters", c.gmm.max_iters));
        c.gmm.tol = kv.get_double("gmm.tol", c.gmm.tol);
        c.gmm.ridge = kv.get_double("gmm.ridge", c.gmm.ridge);
        c.gmm.min_cluster_size = static_cast<std::size_t>(non_negative(kv, "gmm.min_cluster_size", 0));

        c.emd.sd_stop = kv.get_double("emd.sd_stop", c.emd.sd_stop);
        c.emd.max_sift_iters = static_cast<int>(positive(kv, "emd.max_sift_iters", c.emd.max_sift_iters));
        c.emd.max_imfs = static_cast<int>(positive(kv, "emd.max_imfs", c.emd.max_imfs));
        c.emd.boundary_pad_extrema = static_cast<int>(positive(kv, "emd.boundary_pad_extrema", c.emd.boundary_pad_extrema));
        c.causal_window = static_cast<std::size_t>(positive(kv, "emd.causal_window", 128));

        c.flags.causal_thresholds = kv.get_bool("flags.causal_thresholds", false);
        c.flags.causal_gmm = kv.get_bool("flags.causal_gmm", false);
        c.flags.causal_emd = kv.get_bool("flags.causal_emd", false);
        c.flags.include_window_end_label = kv.get_bool("flags.include_window_end_label", false);
        c.flags.trend_includes_residual = kv.get_bool("flags.trend_includes_residual", true);

        kv.reject_unknown();
        c.echo = kv.echo();
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        auto kv = KeyValueConfig::load(path);
        return from_config(kv);
    }

private:
    static long long positive(KeyValueConfig& kv, const std::string& key, long long fallback) {
        const auto v = kv.get_int(key, fallback);
        if (v < 1) throw ConfigError("config: " + key + " must be >= 1");
        return v;
    }
    static long long non_negative(KeyValueConfig& kv, const std::string& key, long long fallback) {
        const auto v = kv.get_int(key, fallback);
        if (v < 0) throw ConfigError("config: " + key + " must be >= 0");
        return v;
    }
};

/// Restricts a run to matching cells; an unset field matches everything.
struct OnlyFilter {
    std::optional<std::string> market;
    std::optional<std::string> cluster;
    std::optional<std::string> source;
    std::optional<std::string> learner;
    std::optional<std::string> fraction;

    static OnlyFilter parse(std::string_view text) {
        OnlyFilter f;
        if (csv::trim(text).empty()) return f;
        for (auto item : csv::split(text, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string_view::npos) throw ConfigError("--only: expected key=value, got '" + std::string(item) + "'");
            const std::string key(csv::trim(item.substr(0, eq)));
            std::string value(csv::trim(item.substr(eq + 1)));
            std::optional<std::string>* slot = key == "market"    ? &f.market
                                               : key == "cluster" ? &f.cluster
                                               : key == "source"  ? &f.source
                                               : key == "learner" ? &f.learner
                                               : key == "fraction" ? &f.fraction
                                                                   : nullptr;
            if (!slot) throw ConfigError("--only: unknown key '" + key + "'");
            if (slot->has_value()) throw ConfigError("--only: '" + key + "' given twice");
            if (key == "source" && !parse_source(value)) throw ConfigError("--only: unknown source '" + value + "'");
            if (key == "learner" && !learners::parse_kind(value)) throw ConfigError("--only: unknown learner '" + value + "'");
            if (key == "fraction") {
                auto d = csv::parse_double(value);
                if (!d) throw ConfigError("--only: bad fraction '" + value + "'");
                value = fraction_name(*d);
            }
            *slot = std::move(value);
        }
        return f;
    }

    static bool match(const std::optional<std::string>& want, std::string_view have) { return !want || *want == have; }
};

struct ReportRow {
    std::string market;
    int cluster = kAllRows;
    Source source = Source::Raw;
    learners::LearnerKind learner = learners::LearnerKind::Knn;
    double test_fraction = 0.0;
    std::optional<double> apc;
    std::optional<BaselineBand> baseline;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    Confusion confusion{};
    std::string skip_reason;
    std::uint64_t seed = 0;
    std::uint64_t baseline_seed = 0;

    bool skipped() const { return !skip_reason.empty(); }
    bool beats_p97_5() const { return apc && baseline && *apc > baseline->p97_5; }
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    nlohmann::ordered_json meta;
};

inline std::uint64_t cell_seed(std::uint64_t global, const std::string& market, int cluster, Source s,
                               learners::LearnerKind k, double fraction) {
    return derive_seed(global, {market, cluster_name(cluster), source_name(s), learners::kind_name(k), fraction_name(fraction)});
}

/// Shared by every learner and source of one (market, partition, fraction) so
/// their APCs are compared against the same random-policy band.
inline std::uint64_t baseline_seed(std::uint64_t global, const std::string& market, int cluster, double fraction) {
    return derive_seed(global, {market, cluster_name(cluster), "baseline", fraction_name(fraction)});
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception by
/// index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto body = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) body(i);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace detail {

struct Partition {
    int cluster = kAllRows;
    std::vector<std::size_t> rows;  // indices into the context's feature rows, ascending
    std::string skip_reason;
    std::array<RowMatrix, 5> sources;
    std::vector<std::size_t> imf_counts;  // per feature column; empty in causal mode
};

/// Labels, features and partitions under one threshold/GMM fitting regime.
struct Context {
    std::optional<double> fraction;  // set for per-fraction contexts
    Thresholds thresholds;
    LabeledSeries labeled;
    FeatureMatrix features;
    std::optional<std::size_t> split_row;  // first test row of the market-level split
    std::vector<Partition> partitions;
    nlohmann::ordered_json gmm_meta;
};

struct Market {
    MarketSpec spec;
    CandleSeries candles;
    std::vector<Context> contexts;
};

inline Market load_market(const MarketSpec& spec, std::size_t window) {
    Market m;
    m.spec = spec;
    m.candles = load_candles(spec.path, spec.id);
    if (spec.end_timestamp) {
        auto& c = m.candles.candles;
        c.erase(std::find_if(c.begin(), c.end(), [&](const Candle& k) { return k.timestamp > *spec.end_timestamp; }),
                c.end());
    }
    if (m.candles.size() < window + 2)
        throw InputError("market " + spec.id + ": " + std::to_string(m.candles.size()) + " candles; need at least " +
                         std::to_string(window + 2));
    return m;
}

inline std::size_t feature_row_count(std::size_t n_candles, std::size_t window) { return n_candles - 1 - window + 1; }

inline Context build_context(const Market& m, const ExperimentConfig& cfg, std::optional<double> fraction) {
    Context ctx;
    ctx.fraction = fraction;
    const auto returns = log_returns(m.candles);
    const std::size_t n_rows = feature_row_count(m.candles.size(), cfg.window);
    std::size_t threshold_end = returns.returns.size();
    if (fraction) {
        const std::size_t n_test = test_size(n_rows, *fraction);
        if (n_test == 0 || n_test >= n_rows)
            throw InputError("market " + m.spec.id + ": too few rows for test fraction " + fraction_name(*fraction));
        ctx.split_row = n_rows - n_test;
        // the first test row predicts returns[w - 1 + split_row]; thresholds see only earlier returns
        if (cfg.flags.causal_thresholds) threshold_end = cfg.window - 1 + *ctx.split_row;
    }
    ctx.thresholds = quantile_thresholds(std::span(returns.returns).first(threshold_end), cfg.quantile);
    ctx.labeled = label_decisions(returns, ctx.thresholds.lower, ctx.thresholds.upper);
    FeatureOptions opt;
    opt.window = cfg.window;
    opt.include_window_end_label = cfg.flags.include_window_end_label;
    ctx.features = extract_features(ctx.labeled, m.candles, opt);

    if (!cfg.gmm_enabled) {
        ctx.partitions.push_back({});
        auto& all = ctx.partitions.back().rows;
        all.resize(ctx.features.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return ctx;
    }

    const RowMatrix X = ctx.features.to_matrix();
    std::vector<std::size_t> fit_rows(ctx.features.size());
    std::iota(fit_rows.begin(), fit_rows.end(), std::size_t{0});
    if (cfg.flags.causal_gmm && ctx.split_row) fit_rows.resize(*ctx.split_row);
    const auto fit_X = X.select_rows(fit_rows);
    const auto scaler = Standardizer::fit(fit_X);
    auto gcfg = cfg.gmm;
    gcfg.seed = derive_seed(cfg.seed, {m.spec.id, "gmm", fraction ? fraction_name(*fraction) : "shared"});

    if (cfg.include_unfiltered) {
        Partition all;
        all.rows.resize(ctx.features.size());
        std::iota(all.rows.begin(), all.rows.end(), std::size_t{0});
        ctx.partitions.push_back(std::move(all));
    }
    try {
        const auto sel = gmm::select_g_bic(scaler.apply(fit_X), gcfg);
        const auto assign = gmm::assign_clusters(sel.best, scaler.apply(X), gcfg.effective_min_cluster_size(kFeatureCount));
        auto& gm = ctx.gmm_meta;
        gm["selected_G"] = sel.best.components();
        gm["fit_rows"] = fit_rows.size();
        gm["min_cluster_size"] = gcfg.effective_min_cluster_size(kFeatureCount);
        gm["seed"] = gcfg.seed;
        for (const auto& e : sel.bic_by_g) {
            nlohmann::ordered_json b;
            b["G"] = e.G;
            if (e.bic) {
                b["bic"] = *e.bic;
                b["log_likelihood"] = e.log_likelihood;
                b["n_params"] = e.n_params;
            } else {
                b["failure"] = e.failure;
            }
            gm["bic"].push_back(b);
        }
        gm["cluster_sizes"] = assign.cluster_sizes;
        for (int g = 0; g < static_cast<int>(sel.best.components()); ++g) {
            Partition p;
            p.cluster = g;
            p.rows = assign.members(g);
            if (assign.skipped[static_cast<std::size_t>(g)])
                p.skip_reason = "cluster size " + std::to_string(p.rows.size()) + " below minimum " +
                                std::to_string(gcfg.effective_min_cluster_size(kFeatureCount));
            ctx.partitions.push_back(std::move(p));
        }
    } catch (const gmm::FitError& e) {
        // no clusters to enumerate; the failure surfaces as skipped unfiltered rows
        ctx.gmm_meta["failure"] = e.what();
        if (!cfg.include_unfiltered) {
            Partition p;
            p.skip_reason = std::string("gmm: ") + e.what();
            ctx.partitions.push_back(std::move(p));
        }
    }
    return ctx;
}

inline void decompose_partition(Partition& p, const Context& ctx, const ExperimentConfig& cfg) {
    if (!p.skip_reason.empty()) return;
    const std::size_t n = p.rows.size();
    if (n < emd::kMinDecomposeLength) {
        p.skip_reason = "partition has " + std::to_string(n) + " rows; decomposition needs 8";
        return;
    }
    const RowMatrix raw = ctx.features.to_matrix().select_rows(p.rows);
    for (auto& s : p.sources) s = RowMatrix(n, kFeatureCount);
    p.sources[0] = raw;
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
        const auto col = raw.column(c);
        emd::ComponentSet cs;
        if (cfg.flags.causal_emd) {
            cs = emd::causal_components(col, cfg.emd, cfg.causal_window, cfg.flags.trend_includes_residual);
        } else {
            const auto d = emd::decompose(col, cfg.emd, std::string(kFeatureNames[c]));
            p.imf_counts.push_back(d.imf_count());
            cs = emd::assemble_components(d, cfg.flags.trend_includes_residual);
        }
        p.sources[1].set_column(c, cs.high);
        p.sources[2].set_column(c, cs.medium);
        p.sources[3].set_column(c, cs.low);
        p.sources[4].set_column(c, cs.trend);
    }
}

struct CellRef {
    std::size_t market = 0;
    std::size_t context = 0;
    std::size_t partition = 0;
    Source source = Source::Raw;
    std::size_t learner = 0;
    double fraction = 0.0;
};

inline void run_cell(ReportRow& row, const Context& ctx, const Partition& p, const learners::LearnerSpec& base,
                     const ExperimentConfig& cfg) {
    if (!p.skip_reason.empty()) {
        row.skip_reason = p.skip_reason;
        return;
    }
    try {
        Split split;
        if (ctx.split_row) {
            // intersect the partition with the market-level split
            for (std::size_t i = 0; i < p.rows.size(); ++i) (p.rows[i] < *ctx.split_row ? split.train : split.test).push_back(i);
            if (split.train.empty() || split.test.empty()) throw std::invalid_argument("empty train or test set");
        } else {
            split = temporal_split(p.rows.size(), row.test_fraction);
        }
        row.n_train = split.train.size();
        row.n_test = split.test.size();

        const RowMatrix& X = p.sources[static_cast<std::size_t>(row.source)];
        const auto scaler = Standardizer::fit(X.select_rows(split.train));
        const auto Xtr = scaler.apply(X.select_rows(split.train));
        const auto Xte = scaler.apply(X.select_rows(split.test));
        std::vector<DecisionLabel> ytr, yte;
        std::vector<double> next;
        for (auto i : split.train) ytr.push_back(ctx.features.rows[p.rows[i]].target);
        for (auto i : split.test) {
            const auto& fr = ctx.features.rows[p.rows[i]];
            yte.push_back(fr.target);
            next.push_back(ctx.labeled.returns.returns[fr.t]);
        }

        auto spec = base;
        spec.seed = row.seed;
        const auto model = learners::train(spec, Xtr, ytr);
        const auto pred = learners::predict(model, Xte);
        row.apc = apc(pred, next, cfg.cost).apc;
        row.baseline = baseline_band(next, cfg.baseline_replicates, row.baseline_seed, cfg.cost);
        row.confusion = confusion(yte, pred);
    } catch (const std::exception& e) {
        row.apc.reset();
        row.baseline.reset();
        row.confusion = {};
        row.skip_reason = e.what();
    }
}

inline nlohmann::ordered_json context_meta(const Context& ctx) {
    nlohmann::ordered_json j;
    j["fraction"] = ctx.fraction ? nlohmann::ordered_json(fraction_name(*ctx.fraction)) : nlohmann::ordered_json("shared");
    j["lower_threshold"] = ctx.thresholds.lower;
    j["upper_threshold"] = ctx.thresholds.upper;
    const auto counts = ctx.labeled.class_counts();
    const double n = static_cast<double>(ctx.labeled.labels.size());
    for (auto d : kAllLabels) {
        j["class_counts"][std::string(label_name(d))] = counts[code(d)];
        j["class_frequencies"][std::string(label_name(d))] = static_cast<double>(counts[code(d)]) / n;
    }
    j["feature_rows"] = ctx.features.size();
    if (ctx.split_row) j["split_row"] = *ctx.split_row;
    if (!ctx.gmm_meta.is_null()) j["gmm"] = ctx.gmm_meta;
    for (const auto& p : ctx.partitions) {
        nlohmann::ordered_json pj;
        pj["cluster"] = cluster_name(p.cluster);
        pj["rows"] = p.rows.size();
        if (!p.imf_counts.empty()) pj["imf_counts"] = p.imf_counts;
        if (!p.skip_reason.empty()) pj["skip_reason"] = p.skip_reason;
        j["partitions"].push_back(pj);
    }
    return j;
}

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1, const OnlyFilter& only = {}) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();

    std::vector<detail::Market> markets;
    for (const auto& spec : cfg.markets)
        if (OnlyFilter::match(only.market, spec.id)) markets.push_back(detail::load_market(spec, cfg.window));

    // Phase 1: one context per market, or one per (market, fraction).
    struct CtxRef {
        std::size_t market;
        std::optional<double> fraction;
    };
    std::vector<CtxRef> ctx_refs;
    for (std::size_t mi = 0; mi < markets.size(); ++mi) {
        if (cfg.flags.per_fraction_context()) {
            for (double f : cfg.test_fractions)
                if (OnlyFilter::match(only.fraction, fraction_name(f))) ctx_refs.push_back({mi, f});
        } else {
            ctx_refs.push_back({mi, std::nullopt});
        }
    }
    std::vector<detail::Context> contexts(ctx_refs.size());
    parallel_for(ctx_refs.size(), jobs, [&](std::size_t i) {
        contexts[i] = detail::build_context(markets[ctx_refs[i].market], cfg, ctx_refs[i].fraction);
    });
    for (std::size_t i = 0; i < ctx_refs.size(); ++i) markets[ctx_refs[i].market].contexts.push_back(std::move(contexts[i]));

    // Phase 2: decompose every partition that some selected cell needs.
    std::vector<detail::Partition*> todo;
    for (auto& m : markets)
        for (auto& ctx : m.contexts)
            for (auto& p : ctx.partitions)
                if (OnlyFilter::match(only.cluster, cluster_name(p.cluster))) todo.push_back(&p);
    std::vector<const detail::Context*> owner;
    for (auto& m : markets)
        for (auto& ctx : m.contexts)
            for (auto& p : ctx.partitions)
                if (OnlyFilter::match(only.cluster, cluster_name(p.cluster))) owner.push_back(&ctx);
    parallel_for(todo.size(), jobs, [&](std::size_t i) { detail::decompose_partition(*todo[i], *owner[i], cfg); });

    // Phase 3: grid cells, in report order.
    ExperimentReport report;
    std::vector<detail::CellRef> cells;
    for (std::size_t mi = 0; mi < markets.size(); ++mi) {
        const auto& m = markets[mi];
        // partitions keyed by cluster; in per-fraction mode each fraction has its own context
        std::vector<int> clusters;
        for (const auto& ctx : m.contexts)
            for (const auto& p : ctx.partitions)
                if (std::find(clusters.begin(), clusters.end(), p.cluster) == clusters.end()) clusters.push_back(p.cluster);
        std::sort(clusters.begin(), clusters.end());
        for (int cl : clusters) {
            if (!OnlyFilter::match(only.cluster, cluster_name(cl))) continue;
            for (auto src : kSources) {
                if (!OnlyFilter::match(only.source, source_name(src))) continue;
                for (std::size_t li = 0; li < cfg.learners.size(); ++li) {
                    if (!OnlyFilter::match(only.learner, learners::kind_name(cfg.learners[li].kind))) continue;
                    for (double f : cfg.test_fractions) {
                        if (!OnlyFilter::match(only.fraction, fraction_name(f))) continue;
                        std::size_t ci = 0;
                        if (cfg.flags.per_fraction_context())
                            while (ci < m.contexts.size() && fraction_name(*m.contexts[ci].fraction) != fraction_name(f)) ++ci;
                        ReportRow row;
                        row.market = m.spec.id;
                        row.cluster = cl;
                        row.source = src;
                        row.learner = cfg.learners[li].kind;
                        row.test_fraction = f;
                        row.seed = cell_seed(cfg.seed, m.spec.id, cl, src, row.learner, f);
                        row.baseline_seed = baseline_seed(cfg.seed, m.spec.id, cl, f);
                        const auto& parts = m.contexts[ci].partitions;
                        std::size_t pi = 0;
                        while (pi < parts.size() && parts[pi].cluster != cl) ++pi;
                        if (pi == parts.size()) {
                            // this fraction's GMM fit produced fewer clusters
                            row.skip_reason = "cluster " + cluster_name(cl) + " absent for this fraction";
                        }
                        cells.push_back({mi, ci, pi, src, li, f});
                        report.rows.push_back(std::move(row));
                    }
                }
            }
        }
    }
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        auto& row = report.rows[i];
        if (row.skipped()) return;
        const auto& c = cells[i];
        const auto& ctx = markets[c.market].contexts[c.context];
        detail::run_cell(row, ctx, ctx.partitions[c.partition], cfg.learners[c.learner], cfg);
    });

    // Metadata
    auto& meta = report.meta;
    meta["version"] = kVersion;
    meta["seed"] = cfg.seed;
    meta["emd_mode"] = cfg.flags.causal_emd ? "CAUSAL" : "LOOK-AHEAD";
    meta["flags"] = {{"causal_thresholds", cfg.flags.causal_thresholds},
                     {"causal_gmm", cfg.flags.causal_gmm},
                     {"causal_emd", cfg.flags.causal_emd},
                     {"include_window_end_label", cfg.flags.include_window_end_label},
                     {"trend_includes_residual", cfg.flags.trend_includes_residual}};
    meta["config"] = cfg.echo;
    if (only.market || only.cluster || only.source || only.learner || only.fraction) {
        auto& o = meta["only"];
        if (only.market) o["market"] = *only.market;
        if (only.cluster) o["cluster"] = *only.cluster;
        if (only.source) o["source"] = *only.source;
        if (only.learner) o["learner"] = *only.learner;
        if (only.fraction) o["fraction"] = *only.fraction;
    }
    for (const auto& m : markets) {
        nlohmann::ordered_json mj;
        mj["id"] = m.spec.id;
        mj["path"] = m.spec.path;
        if (m.spec.end_timestamp) mj["end_timestamp"] = *m.spec.end_timestamp;
        mj["candles"] = m.candles.size();
        mj["gaps"] = m.candles.gap_count();
        for (const auto& ctx : m.contexts) mj["contexts"].push_back(detail::context_meta(ctx));
        meta["markets"].push_back(mj);
    }
    std::size_t skipped = 0;
    for (const auto& r : report.rows) {
        skipped += r.skipped();
        meta["cell_seeds"].push_back({{"market", r.market},
                                      {"cluster", cluster_name(r.cluster)},
                                      {"source", source_name(r.source)},
                                      {"learner", learners::kind_name(r.learner)},
                                      {"fraction", fraction_name(r.test_fraction)},
                                      {"seed", r.seed},
                                      {"baseline_seed", r.baseline_seed}});
    }
    meta["rows"] = report.rows.size();
    meta["skipped_rows"] = skipped;
    meta["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = [] {
        std::vector<std::string> c{"market",         "cluster",        "source",  "learner", "test_fraction",
                                   "apc",            "baseline_mean",  "baseline_p2_5", "baseline_p97_5",
                                   "beats_p97_5",    "n_train",        "n_test"};
        for (auto t : kAllLabels)
            for (auto p : kAllLabels) c.push_back("conf_" + std::string(label_name(t)) + "_" + std::string(label_name(p)));
        c.push_back("skip_reason");
        return c;
    }();
    return cols;
}

/// Skip reasons are free text; commas and quotes are stripped to keep the file
/// splittable on ','.
inline std::string sanitize(std::string s) {
    for (auto& ch : s)
        if (ch == ',' || ch == '"' || ch == '\n' || ch == '\r') ch = ch == ',' ? ';' : ' ';
    return s;
}

inline void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& out) {
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    auto num = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    for (const auto& r : rows) {
        out << r.market << ',' << cluster_name(r.cluster) << ',' << source_name(r.source) << ','
            << learners::kind_name(r.learner) << ',' << fraction_name(r.test_fraction) << ',' << num(r.apc) << ','
            << num(r.baseline ? std::optional(r.baseline->mean) : std::nullopt) << ','
            << num(r.baseline ? std::optional(r.baseline->p2_5) : std::nullopt) << ','
            << num(r.baseline ? std::optional(r.baseline->p97_5) : std::nullopt) << ','
            << (r.skipped() ? "" : (r.beats_p97_5() ? "1" : "0")) << ',';
        if (r.skipped()) {
            out << ",";
            for (int k = 0; k < 9; ++k) out << ',';
        } else {
            out << r.n_train << ',' << r.n_test;
            for (const auto& t : r.confusion)
                for (auto v : t) out << ',' << v;
        }
        out << ',' << sanitize(r.skip_reason) << '\n';
    }
}

/// Per-market plot data: one line per (cluster, source, learner), each value
/// averaged over the test fractions that ran.
inline void write_figure_csv(const std::vector<ReportRow>& rows, const std::string& market, std::ostream& out) {
    out << "cluster,source,learner,apc,baseline_mean,baseline_p2_5,baseline_p97_5\n";
    struct Acc {
        std::array<double, 4> sum{};
        std::size_t n = 0;
    };
    std::vector<std::tuple<int, Source, learners::LearnerKind>> order;
    std::map<std::tuple<int, int, int>, Acc> acc;
    for (const auto& r : rows) {
        if (r.market != market) continue;
        const auto key = std::make_tuple(r.cluster, static_cast<int>(r.source), static_cast<int>(r.learner));
        if (!acc.count(key)) order.emplace_back(r.cluster, r.source, r.learner);
        auto& a = acc[key];
        if (r.skipped()) continue;
        a.sum[0] += *r.apc;
        a.sum[1] += r.baseline->mean;
        a.sum[2] += r.baseline->p2_5;
        a.sum[3] += r.baseline->p97_5;
        ++a.n;
    }
    for (const auto& [cl, src, lk] : order) {
        const auto& a = acc[std::make_tuple(cl, static_cast<int>(src), static_cast<int>(lk))];
        out << cluster_name(cl) << ',' << source_name(src) << ',' << learners::kind_name(lk);
        for (double s : a.sum) out << ',' << (a.n ? format_number(s / static_cast<double>(a.n)) : std::string());
        out << '\n';
    }
}

inline void emit_report(const ExperimentReport& report, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw InputError("cannot create output directory '" + out_dir + "': " + ec.message());
    const std::filesystem::path dir(out_dir);
    auto open = [&](const std::string& name) {
        std::ofstream f(dir / name);
        if (!f) throw InputError("cannot write '" + (dir / name).string() + "'");
        return f;
    };
    {
        auto f = open("report.csv");
        write_report_csv(report.rows, f);
        if (!f) throw InputError("write failure on report.csv");
    }
    std::vector<std::string> markets;
    for (const auto& r : report.rows)
        if (std::find(markets.begin(), markets.end(), r.market) == markets.end()) markets.push_back(r.market);
    for (const auto& m : markets) {
        auto f = open("figure_" + m + ".csv");
        write_figure_csv(report.rows, m, f);
        if (!f) throw InputError("write failure on figure_" + m + ".csv");
    }
    auto f = open("report_meta.json");
    f << report.meta.dump(2) << '\n';
    if (!f) throw InputError("write failure on report_meta.json");
}

}  // namespace emdtrade::pipeline
