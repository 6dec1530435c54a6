#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "crimealarm/bundle.hpp"
#include "crimealarm/event_data.hpp"

using namespace crimealarm;
using namespace crimealarm::data;

namespace {

DateTime at(int hour, int minute, int day = 1) {
    DateTime dt;
    dt.year = 2016;
    dt.month = 1;
    dt.day = day;
    dt.hour = hour;
    dt.minute = minute;
    return dt;
}

EventRecord rec(std::string precinct, std::string premises, DateTime ts,
                std::string category) {
    return EventRecord{std::move(precinct), std::move(premises), ts,
                       std::move(category)};
}

std::filesystem::path temp_dir(const char* tag) {
    auto dir = std::filesystem::temp_directory_path() /
               (std::string("crimealarm_test_") + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("slot_of_timestamp") {
    CHECK(slot_of_timestamp(at(0, 0)) == 0);
    CHECK(slot_of_timestamp(at(23, 59)) == 7);
    CHECK(slot_of_timestamp(at(11, 30)) == 3);
    CHECK(slot_of_timestamp(at(3, 0)) == 1);
    DateTime bad = at(0, 0);
    bad.month = 13;
    CHECK_THROWS_AS(slot_of_timestamp(bad), data_error);
}

TEST_CASE("parse_datetime") {
    std::string err;
    auto dt = parse_datetime("2016-03-01 14:30", "%Y-%m-%d %H:%M", &err);
    REQUIRE(dt.has_value());
    CHECK(dt->hour == 14);
    CHECK(dt->minute == 30);

    auto us = parse_datetime("03/01/2016 02:05:09 PM", "%m/%d/%Y %H:%M:%S PM");
    REQUIRE(us.has_value());
    CHECK(us->month == 3);
    CHECK(us->second == 9);

    CHECK_FALSE(parse_datetime("2016-02-30 00:00", "%Y-%m-%d %H:%M", &err).has_value());
    CHECK_FALSE(parse_datetime("not a date", "%Y-%m-%d %H:%M", &err).has_value());
    CHECK_FALSE(parse_datetime("2016-01-01", "%Y-%m-%d %H:%M", &err).has_value());
    // leap day accepted
    CHECK(parse_datetime("2016-02-29 12:00", "%Y-%m-%d %H:%M").has_value());
}

TEST_CASE("build_vocabulary") {
    SECTION("one id per distinct slot-category pair") {
        std::vector<EventRecord> records{rec("p", "s", at(1, 0), "A"),
                                         rec("p", "s", at(2, 0), "B"),
                                         rec("p", "s", at(1, 30), "A")};
        auto vocab = build_vocabulary(records);
        CHECK(vocab.size() == 2);
        CHECK(vocab.pad_id == 2);
        CHECK(vocab.mask_id == 3);
    }
    SECTION("same category in two slots yields two classes") {
        std::vector<EventRecord> records{rec("p", "s", at(1, 0), "A"),
                                         rec("p", "s", at(13, 0), "A")};
        auto vocab = build_vocabulary(records);
        CHECK(vocab.size() == 2);
        CHECK(vocab.id_of(EventClass{0, "A"}) != vocab.id_of(EventClass{4, "A"}));
    }
    SECTION("empty input rejected") {
        CHECK_THROWS_AS(build_vocabulary({}), data_error);
    }
    SECTION("id assignment independent of record order") {
        std::vector<EventRecord> a{rec("p", "s", at(1, 0), "B"),
                                   rec("p", "s", at(2, 0), "A")};
        std::vector<EventRecord> b{a[1], a[0]};
        auto va = build_vocabulary(a);
        auto vb = build_vocabulary(b);
        CHECK(va.classes == vb.classes);
    }
}

TEST_CASE("build_sequences") {
    std::vector<EventRecord> records;
    // spot X: 4 events (dropped); spot Y: 5 events (kept)
    for (int i = 0; i < 4; ++i) records.push_back(rec("p1", "X", at(1, i, i + 1), "A"));
    for (int i = 0; i < 5; ++i) records.push_back(rec("p1", "Y", at(1, i, i + 1), "A"));
    auto vocab = build_vocabulary(records);
    BuildReport report;
    auto spots = build_sequences(records, vocab, 5, &report);
    REQUIRE(spots.size() == 1);
    CHECK(spots[0].premises == "Y");
    CHECK(spots[0].events.size() == 5);
    CHECK(report.spots_dropped == 1);
    CHECK(report.records_dropped == 4);

    SECTION("chronological order with input-order tie break") {
        std::vector<EventRecord> ties;
        ties.push_back(rec("p", "s", at(6, 0, 2), "B"));  // later day
        ties.push_back(rec("p", "s", at(3, 0, 1), "A"));  // same instant, first
        ties.push_back(rec("p", "s", at(3, 0, 1), "C"));  // same instant, second
        ties.push_back(rec("p", "s", at(0, 0, 1), "D"));  // earliest
        ties.push_back(rec("p", "s", at(9, 0, 3), "E"));
        auto v = build_vocabulary(ties);
        auto seqs = build_sequences(ties, v, 5);
        REQUIRE(seqs.size() == 1);
        std::vector<int> expected{v.id_of({0, "D"}), v.id_of({1, "A"}), v.id_of({1, "C"}),
                                  v.id_of({2, "B"}), v.id_of({3, "E"})};
        CHECK(seqs[0].events == expected);
    }
}

TEST_CASE("split_and_window") {
    SECTION("leave-last-out on a five-event spot") {
        SpotSequence seq{"p", "s", {10, 11, 12, 13, 14}};
        auto c = split_and_window(seq, 200);
        CHECK(c.test.history == std::vector<int>{10, 11, 12, 13});
        CHECK(c.test.target == 14);
        CHECK(c.val.history == std::vector<int>{10, 11, 12});
        CHECK(c.val.target == 13);
        REQUIRE(c.train.size() == 1);
        CHECK(c.train[0].input == std::vector<int>{10, 11});
        CHECK(c.train[0].target == 12);
    }
    SECTION("right-to-left tiling of a 450-event prefix") {
        // enumerate the expected chunk boundaries by hand: with L=200 the
        // prefix [1..450] tiles into (250..450], (50..250], (0..50]
        SpotSequence seq{"p", "s", {}};
        const int prefix = 450;
        for (int i = 0; i < prefix + 2; ++i) seq.events.push_back(i);
        auto c = split_and_window(seq, 200);
        REQUIRE(c.train.size() == 3);
        CHECK(c.train[0].target == 449);
        CHECK(c.train[0].input.front() == 250);
        CHECK(c.train[0].input.back() == 448);
        CHECK(c.train[0].input.size() == 199);
        CHECK(c.train[1].target == 249);
        CHECK(c.train[1].input.front() == 50);
        CHECK(c.train[1].input.size() == 199);
        CHECK(c.train[2].target == 49);
        CHECK(c.train[2].input.front() == 0);
        CHECK(c.train[2].input.size() == 49);
        CHECK(c.val.target == 450);
        CHECK(c.test.target == 451);
    }
    SECTION("window inputs never exceed L-1") {
        SpotSequence seq{"p", "s", {}};
        for (int i = 0; i < 37; ++i) seq.events.push_back(i % 7);
        auto c = split_and_window(seq, 8);
        for (const auto& w : c.train) {
            CHECK(w.input.size() <= 7);
            CHECK(w.input.size() >= 1);
        }
    }
    SECTION("val and test positions never reach training windows") {
        // distinct sentinel per position makes leakage visible
        SpotSequence seq{"p", "s", {}};
        for (int i = 0; i < 23; ++i) seq.events.push_back(i);
        auto c = split_and_window(seq, 6);
        for (const auto& w : c.train) {
            for (int v : w.input) {
                CHECK(v != 21);
                CHECK(v != 22);
            }
            CHECK(w.target != 21);
            CHECK(w.target != 22);
        }
    }
}

TEST_CASE("popularity_negatives") {
    Vocabulary vocab;
    const auto set_freq = [&](std::vector<std::int64_t> f) {
        vocab.classes.clear();
        vocab.class_to_id.clear();
        for (int i = 0; i < static_cast<int>(f.size()); ++i) {
            EventClass c{i % 8, "C" + std::to_string(i)};
            vocab.class_to_id.emplace(c, i);
            vocab.classes.push_back(std::move(c));
        }
        vocab.frequency = std::move(f);
        vocab.pad_id = vocab.size();
        vocab.mask_id = vocab.size() + 1;
    };

    SECTION("uniform frequencies include uniformly (chi-square)") {
        set_freq(std::vector<std::int64_t>(30, 5));
        rng_t rng(make_rng(101, "neg-uniform"));
        std::vector<int> counts(30, 0);
        const int trials = 10000, n = 5;
        for (int trial = 0; trial < trials; ++trial) {
            auto ids = popularity_negatives(vocab, {}, n, rng);
            REQUIRE(static_cast<int>(ids.size()) == n);
            for (int id : ids) counts[static_cast<std::size_t>(id)] += 1;
        }
        const double expected = trials * n / 30.0;
        double chi2 = 0.0;
        for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
        CHECK(chi2 < 60.0); // dof 29
    }
    SECTION("zero-frequency class unreachable without smoothing") {
        set_freq({0, 10, 10, 10});
        rng_t rng(make_rng(102, "neg-zero"));
        for (int trial = 0; trial < 500; ++trial) {
            auto ids = popularity_negatives(vocab, {}, 3, rng);
            for (int id : ids) CHECK(id != 0);
        }
        rng_t rng2(make_rng(103, "neg-smooth"));
        bool seen = false;
        for (int trial = 0; trial < 500 && !seen; ++trial) {
            auto ids = popularity_negatives(vocab, {}, 3, rng2, true);
            for (int id : ids) seen = seen || id == 0;
        }
        CHECK(seen);
    }
    SECTION("draw probability proportional to frequency") {
        set_freq({90, 10, 55});
        rng_t rng(make_rng(104, "neg-prop"));
        int id0 = 0;
        const int trials = 10000;
        for (int trial = 0; trial < trials; ++trial) {
            auto ids = popularity_negatives(vocab, {2}, 1, rng);
            REQUIRE(ids.size() == 1);
            if (ids[0] == 0) ++id0;
        }
        const double frac = static_cast<double>(id0) / trials;
        const double sigma = std::sqrt(0.9 * 0.1 / trials);
        CHECK(std::abs(frac - 0.9) < 4.0 * sigma);
    }
    SECTION("short pool returns every eligible id") {
        set_freq({5, 5, 5, 5});
        rng_t rng(make_rng(105, "neg-short"));
        auto ids = popularity_negatives(vocab, {0}, 100, rng);
        CHECK(ids.size() == 3);
        std::sort(ids.begin(), ids.end());
        CHECK(ids == std::vector<int>{1, 2, 3});
    }
    SECTION("history never sampled") {
        set_freq({10, 10, 10, 10, 10, 10});
        rng_t rng(make_rng(106, "neg-hist"));
        for (int trial = 0; trial < 200; ++trial) {
            auto ids = popularity_negatives(vocab, {1, 4}, 3, rng);
            for (int id : ids) {
                CHECK(id != 1);
                CHECK(id != 4);
            }
        }
    }
}

TEST_CASE("synth_generate") {
    SECTION("deterministic given the seed") {
        SynthParams p;
        p.n_spots = 10;
        rng_t a(make_rng(7, "synth"));
        rng_t b(make_rng(7, "synth"));
        auto ra = synth_generate(p, a);
        auto rb = synth_generate(p, b);
        REQUIRE(ra.size() == rb.size());
        for (std::size_t i = 0; i < ra.size(); ++i) {
            CHECK(ra[i].premises == rb[i].premises);
            CHECK(ra[i].category == rb[i].category);
            CHECK(ra[i].timestamp == rb[i].timestamp);
        }
    }
    SECTION("no switching keeps each spot inside one sparse intent") {
        SynthParams p;
        p.n_spots = 30;
        p.n_classes = 40;
        p.switch_prob = 0.0;
        rng_t rng(make_rng(8, "synth0"));
        auto records = synth_generate(p, rng);
        auto vocab = build_vocabulary(records);
        auto spots = build_sequences(records, vocab, 5);
        const int support = std::max(2, p.n_classes / 5);
        for (const auto& s : spots) {
            std::set<int> distinct(s.events.begin(), s.events.end());
            CHECK(static_cast<int>(distinct.size()) <= support);
        }
    }
    SECTION("frequent switching raises per-spot diversity") {
        SynthParams p;
        p.n_spots = 40;
        p.n_classes = 40;
        const auto mean_distinct = [&](double sp, const char* tag) {
            SynthParams q = p;
            q.switch_prob = sp;
            rng_t rng(make_rng(9, tag));
            auto records = synth_generate(q, rng);
            auto vocab = build_vocabulary(records);
            auto spots = build_sequences(records, vocab, 5);
            double total = 0.0;
            for (const auto& s : spots) {
                std::set<int> d(s.events.begin(), s.events.end());
                total += static_cast<double>(d.size());
            }
            return total / static_cast<double>(spots.size());
        };
        CHECK(mean_distinct(1.0, "hi") > mean_distinct(0.0, "lo"));
    }
    SECTION("invalid parameters rejected") {
        SynthParams p;
        p.n_classes = 1;
        rng_t rng(make_rng(10, "bad"));
        CHECK_THROWS_AS(synth_generate(p, rng), config_error);
        p = SynthParams{};
        p.switch_prob = 1.5;
        CHECK_THROWS_AS(synth_generate(p, rng), config_error);
    }
}

TEST_CASE("read_records") {
    SECTION("header mapping, quoting and rejects") {
        std::istringstream in(
            "when,where_precinct,where_premises,what\n"
            "2016-01-02 03:04,P1,\"Main st, 5\",THEFT\n"
            "2016-01-02 03:05,P1,,THEFT\n"
            "garbled,P1,Main,THEFT\n"
            "2016-01-03 10:00,P2,Oak ave,\"ASSAULT \"\"minor\"\"\"\n");
        ReadOptions opt;
        opt.timestamp_format = "%Y-%m-%d %H:%M";
        opt.columns = {"where_precinct", "where_premises", "when", "what"};
        ReadReport report;
        auto records = read_records(in, opt, &report);
        REQUIRE(records.size() == 2);
        CHECK(records[0].premises == "Main st, 5");
        CHECK(records[1].category == "ASSAULT \"minor\"");
        CHECK(report.parsed == 2);
        CHECK(report.rejected == 2);
        REQUIRE(report.sample_errors.size() == 2);
    }
    SECTION("missing column is a schema error") {
        std::istringstream in("a,b\n1,2\n");
        ReadOptions opt;
        CHECK_THROWS_AS(read_records(in, opt), data_error);
    }
    SECTION("tab delimiter") {
        std::istringstream in("precinct\tpremises\ttimestamp\tcategory\nP\tS\t2016-05-05 05:05\tX\n");
        ReadOptions opt;
        opt.delimiter = '\t';
        auto records = read_records(in, opt);
        REQUIRE(records.size() == 1);
        CHECK(records[0].category == "X");
    }
}

TEST_CASE("prepare_dataset and bundle round-trip") {
    SynthParams p;
    p.n_spots = 25;
    p.n_classes = 30;
    p.switch_prob = 0.4;
    p.len_lo = 8;
    p.len_hi = 40;
    rng_t rng(make_rng(55, "bundle"));
    auto records = synth_generate(p, rng);

    PrepareOptions opt;
    opt.max_len = 12;
    opt.n_negatives = 10;
    opt.seed = 99;
    auto bundle = prepare_dataset(records, opt);

    SECTION("structure invariants") {
        CHECK(bundle.stats.spots == bundle.val.size());
        CHECK(bundle.stats.spots == bundle.test.size());
        CHECK(bundle.stats.records > 0);
        const int n_classes = bundle.vocab.size();
        std::int64_t freq_total = 0;
        for (auto f : bundle.vocab.frequency) freq_total += f;
        std::size_t window_positions = 0;
        for (const auto& w : bundle.train) {
            CHECK(w.target < n_classes);
            CHECK(w.target >= 0);
            for (int id : w.input) CHECK(id < n_classes);
            window_positions += w.input.size() + 1;
        }
        CHECK(freq_total == static_cast<std::int64_t>(window_positions));
        for (std::size_t i = 0; i < bundle.test.size(); ++i) {
            const auto& pair = bundle.test[i];
            for (int neg : pair.negatives) {
                CHECK(neg != pair.target);
                CHECK(neg < n_classes);
            }
            std::set<int> uniq(pair.negatives.begin(), pair.negatives.end());
            CHECK(uniq.size() == pair.negatives.size());
            // negatives exclude everything the spot interacted with
            std::set<int> hist(bundle.spots[i].events.begin(),
                               bundle.spots[i].events.end());
            for (int neg : pair.negatives) CHECK(hist.count(neg) == 0);
        }
    }

    SECTION("serialization round-trips identically") {
        auto dir = temp_dir("roundtrip");
        write_bundle(dir, bundle);
        auto loaded = read_bundle(dir);
        CHECK(loaded.vocab.classes == bundle.vocab.classes);
        CHECK(loaded.vocab.frequency == bundle.vocab.frequency);
        CHECK(loaded.vocab.pad_id == bundle.vocab.pad_id);
        REQUIRE(loaded.train.size() == bundle.train.size());
        for (std::size_t i = 0; i < bundle.train.size(); ++i) {
            CHECK(loaded.train[i].input == bundle.train[i].input);
            CHECK(loaded.train[i].target == bundle.train[i].target);
        }
        REQUIRE(loaded.val.size() == bundle.val.size());
        for (std::size_t i = 0; i < bundle.val.size(); ++i) {
            CHECK(loaded.val[i].history == bundle.val[i].history);
            CHECK(loaded.val[i].target == bundle.val[i].target);
            CHECK(loaded.val[i].negatives == bundle.val[i].negatives);
        }
        REQUIRE(loaded.test.size() == bundle.test.size());
        for (std::size_t i = 0; i < bundle.test.size(); ++i)
            CHECK(loaded.test[i].history == bundle.test[i].history);
        std::filesystem::remove_all(dir);
    }

    SECTION("preparation is reproducible") {
        auto again = prepare_dataset(records, opt);
        REQUIRE(again.train.size() == bundle.train.size());
        for (std::size_t i = 0; i < bundle.test.size(); ++i)
            CHECK(again.test[i].negatives == bundle.test[i].negatives);
    }

    SECTION("stats line formats") {
        auto line = format_stats(bundle.stats);
        CHECK(line.find("spots") != std::string::npos);
        CHECK(line.find("classes") != std::string::npos);
    }
}
