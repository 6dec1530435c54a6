#ifndef CRIMEALARM_BUNDLE_HPP
#define CRIMEALARM_BUNDLE_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimealarm/event_data.hpp"

// A prepared dataset bundle: vocabulary, retained spot sequences, train
// windows, leave-last-out evaluation pairs with fixed negatives, and the
// statistics line. Written as a directory of JSON documents with a format
// version so bundles stay stable across runs.

namespace crimealarm::data {

inline constexpr int kBundleFormatVersion = 1;

struct PrepareOptions {
    int max_len = 200;   // L: window length ceiling (input <= L-1 plus target)
    int min_events = 5;  // spots below this are dropped
    int n_negatives = 100;
    bool smoothing = false;                  // +1 smoothing for negative sampling
    std::string popularity_source = "train"; // "train" or "all"
    std::uint64_t seed = 1;

    void validate() const {
        if (max_len < 2) throw config_error("prepare: max_len must be >= 2");
        if (min_events < 3) throw config_error("prepare: min_events must be >= 3");
        if (n_negatives < 1) throw config_error("prepare: n_negatives must be >= 1");
        if (popularity_source != "train" && popularity_source != "all")
            throw config_error("prepare: popularity_source must be 'train' or 'all'");
    }
};

struct DatasetStats {
    std::size_t spots = 0;
    std::size_t records = 0;
    int classes = 0;
    int max_per_spot = 0;
    int min_per_spot = 0;
    double avg_per_spot = 0.0;
    double std_per_spot = 0.0;
    std::size_t train_windows = 0;
};

struct DatasetBundle {
    Vocabulary vocab;
    std::vector<SpotSequence> spots;
    std::vector<TrainWindow> train;
    std::vector<EvalPair> val;
    std::vector<EvalPair> test;
    PrepareOptions options;
    DatasetStats stats;
};

inline DatasetStats compute_stats(const std::vector<SpotSequence>& spots,
                                  int n_classes, std::size_t train_windows) {
    DatasetStats s;
    s.spots = spots.size();
    s.classes = n_classes;
    s.train_windows = train_windows;
    if (spots.empty()) return s;
    s.min_per_spot = static_cast<int>(spots.front().events.size());
    double sum = 0.0, sumsq = 0.0;
    for (const auto& spot : spots) {
        const int len = static_cast<int>(spot.events.size());
        s.records += spot.events.size();
        s.max_per_spot = std::max(s.max_per_spot, len);
        s.min_per_spot = std::min(s.min_per_spot, len);
        sum += len;
        sumsq += static_cast<double>(len) * len;
    }
    const double n = static_cast<double>(spots.size());
    s.avg_per_spot = sum / n;
    s.std_per_spot = std::sqrt(std::max(0.0, sumsq / n - s.avg_per_spot * s.avg_per_spot));
    return s;
}

inline std::string format_stats(const DatasetStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%zu spots / %zu records / %d classes | per spot max %d min %d "
                  "avg %.2f std %.2f | %zu train windows",
                  s.spots, s.records, s.classes, s.max_per_spot, s.min_per_spot,
                  s.avg_per_spot, s.std_per_spot, s.train_windows);
    return buf;
}

// Full preparation pipeline. Vocabulary frequencies count training-window
// positions only; negatives are fixed here with seeds derived per pair so
// evaluation stays comparable across checkpoints and peers.
inline DatasetBundle prepare_dataset(const std::vector<EventRecord>& records,
                                     const PrepareOptions& options,
                                     BuildReport* report = nullptr) {
    options.validate();
    DatasetBundle bundle;
    bundle.options = options;
    bundle.vocab = build_vocabulary(records);
    bundle.spots = build_sequences(records, bundle.vocab, options.min_events, report);
    if (bundle.spots.empty())
        throw data_error("prepare_dataset: no spot reaches the minimum event count");

    for (const auto& spot : bundle.spots) {
        auto contrib = split_and_window(spot, options.max_len);
        bundle.val.push_back(std::move(contrib.val));
        bundle.test.push_back(std::move(contrib.test));
        for (auto& w : contrib.train) bundle.train.push_back(std::move(w));
    }

    for (const auto& w : bundle.train) {
        for (int id : w.input) bundle.vocab.frequency[static_cast<std::size_t>(id)] += 1;
        bundle.vocab.frequency[static_cast<std::size_t>(w.target)] += 1;
    }

    // Negative sampling weights: training frequencies by default, full-data
    // counts behind the flag.
    Vocabulary sampler_vocab = bundle.vocab;
    if (options.popularity_source == "all") {
        std::fill(sampler_vocab.frequency.begin(), sampler_vocab.frequency.end(), 0);
        for (const auto& spot : bundle.spots)
            for (int id : spot.events)
                sampler_vocab.frequency[static_cast<std::size_t>(id)] += 1;
    }

    for (std::size_t i = 0; i < bundle.spots.size(); ++i) {
        std::unordered_set<int> history(bundle.spots[i].events.begin(),
                                        bundle.spots[i].events.end());
        rng_t val_rng = make_rng(options.seed, "negatives-val", i);
        bundle.val[i].negatives = popularity_negatives(
            sampler_vocab, history, options.n_negatives, val_rng, options.smoothing);
        rng_t test_rng = make_rng(options.seed, "negatives-test", i);
        bundle.test[i].negatives = popularity_negatives(
            sampler_vocab, history, options.n_negatives, test_rng, options.smoothing);
    }

    bundle.stats = compute_stats(bundle.spots, bundle.vocab.size(), bundle.train.size());
    return bundle;
}

// ---------------------------------------------------------------------------
// Directory serialization
// ---------------------------------------------------------------------------

namespace detail {
inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path.string());
    out << j.dump(1, '\t') << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline nlohmann::json eval_pairs_to_json(const std::vector<EvalPair>& pairs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pairs)
        arr.push_back({{"spot", p.spot_key},
                       {"history", p.history},
                       {"target", p.target},
                       {"negatives", p.negatives}});
    return arr;
}

inline std::vector<EvalPair> eval_pairs_from_json(const nlohmann::json& arr) {
    std::vector<EvalPair> pairs;
    for (const auto& j : arr) {
        EvalPair p;
        p.spot_key = j.at("spot").get<std::string>();
        p.history = j.at("history").get<std::vector<int>>();
        p.target = j.at("target").get<int>();
        p.negatives = j.at("negatives").get<std::vector<int>>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}
} // namespace detail

inline void write_bundle(const std::filesystem::path& dir, const DatasetBundle& b) {
    std::filesystem::create_directories(dir);

    nlohmann::json manifest{
        {"format_version", kBundleFormatVersion},
        {"seed", b.options.seed},
        {"max_len", b.options.max_len},
        {"min_events", b.options.min_events},
        {"n_negatives", b.options.n_negatives},
        {"smoothing", b.options.smoothing},
        {"popularity_source", b.options.popularity_source},
        {"stats",
         {{"spots", b.stats.spots},
          {"records", b.stats.records},
          {"classes", b.stats.classes},
          {"max_per_spot", b.stats.max_per_spot},
          {"min_per_spot", b.stats.min_per_spot},
          {"avg_per_spot", b.stats.avg_per_spot},
          {"std_per_spot", b.stats.std_per_spot},
          {"train_windows", b.stats.train_windows}}}};
    detail::write_json(dir / "manifest.json", manifest);

    nlohmann::json vocab{{"pad_id", b.vocab.pad_id}, {"mask_id", b.vocab.mask_id}};
    nlohmann::json classes = nlohmann::json::array();
    for (int i = 0; i < b.vocab.size(); ++i)
        classes.push_back({{"slot", b.vocab.classes[static_cast<std::size_t>(i)].slot},
                           {"category",
                            b.vocab.classes[static_cast<std::size_t>(i)].category},
                           {"frequency",
                            b.vocab.frequency[static_cast<std::size_t>(i)]}});
    vocab["classes"] = std::move(classes);
    detail::write_json(dir / "vocab.json", vocab);

    nlohmann::json spots = nlohmann::json::array();
    for (const auto& s : b.spots)
        spots.push_back(
            {{"precinct", s.precinct}, {"premises", s.premises}, {"events", s.events}});
    detail::write_json(dir / "sequences.json", spots);

    nlohmann::json train = nlohmann::json::array();
    for (const auto& w : b.train)
        train.push_back({{"input", w.input}, {"target", w.target}});
    detail::write_json(dir / "splits.json",
                       nlohmann::json{{"train", std::move(train)},
                                      {"val", detail::eval_pairs_to_json(b.val)},
                                      {"test", detail::eval_pairs_to_json(b.test)}});
}

inline DatasetBundle read_bundle(const std::filesystem::path& dir) {
    const auto manifest = detail::read_json(dir / "manifest.json");
    if (manifest.at("format_version").get<int>() != kBundleFormatVersion)
        throw data_error("bundle format version mismatch in " + dir.string());

    DatasetBundle b;
    b.options.seed = manifest.at("seed").get<std::uint64_t>();
    b.options.max_len = manifest.at("max_len").get<int>();
    b.options.min_events = manifest.at("min_events").get<int>();
    b.options.n_negatives = manifest.at("n_negatives").get<int>();
    b.options.smoothing = manifest.at("smoothing").get<bool>();
    b.options.popularity_source = manifest.at("popularity_source").get<std::string>();
    const auto& st = manifest.at("stats");
    b.stats.spots = st.at("spots").get<std::size_t>();
    b.stats.records = st.at("records").get<std::size_t>();
    b.stats.classes = st.at("classes").get<int>();
    b.stats.max_per_spot = st.at("max_per_spot").get<int>();
    b.stats.min_per_spot = st.at("min_per_spot").get<int>();
    b.stats.avg_per_spot = st.at("avg_per_spot").get<double>();
    b.stats.std_per_spot = st.at("std_per_spot").get<double>();
    b.stats.train_windows = st.at("train_windows").get<std::size_t>();

    const auto vocab = detail::read_json(dir / "vocab.json");
    for (const auto& c : vocab.at("classes")) {
        EventClass ec{c.at("slot").get<int>(), c.at("category").get<std::string>()};
        b.vocab.class_to_id.emplace(ec, static_cast<int>(b.vocab.classes.size()));
        b.vocab.classes.push_back(std::move(ec));
        b.vocab.frequency.push_back(c.at("frequency").get<std::int64_t>());
    }
    b.vocab.pad_id = vocab.at("pad_id").get<int>();
    b.vocab.mask_id = vocab.at("mask_id").get<int>();
    if (b.vocab.pad_id != b.vocab.size() || b.vocab.mask_id != b.vocab.size() + 1)
        throw data_error("bundle vocabulary has inconsistent special ids");

    for (const auto& s : detail::read_json(dir / "sequences.json")) {
        SpotSequence seq;
        seq.precinct = s.at("precinct").get<std::string>();
        seq.premises = s.at("premises").get<std::string>();
        seq.events = s.at("events").get<std::vector<int>>();
        b.spots.push_back(std::move(seq));
    }

    const auto splits = detail::read_json(dir / "splits.json");
    for (const auto& w : splits.at("train")) {
        TrainWindow tw;
        tw.input = w.at("input").get<std::vector<int>>();
        tw.target = w.at("target").get<int>();
        b.train.push_back(std::move(tw));
    }
    b.val = detail::eval_pairs_from_json(splits.at("val"));
    b.test = detail::eval_pairs_from_json(splits.at("test"));
    return b;
}

} // namespace crimealarm::data

#endif // CRIMEALARM_BUNDLE_HPP
