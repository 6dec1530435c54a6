#ifndef CRIMEALARM_EVENT_DATA_HPP
#define CRIMEALARM_EVENT_DATA_HPP

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crimealarm/common.hpp"

// Raw event ingestion and the preprocessing pipeline: event classes are
// (3-hour slot, category) pairs, spots are (precinct, premises) pairs whose
// events form one chronological sequence. Leave-last-out splits, right-to-
// left windowing, popularity-based negative sampling and a synthetic
// switching-intent generator for desk-scale experiments.

namespace crimealarm::data {

// ---------------------------------------------------------------------------
// Timestamps (minute resolution; seconds kept when present)
// ---------------------------------------------------------------------------

struct DateTime {
    int year = 1970;
    int month = 1;
    int day = 1;
    int hour = 0;
    int minute = 0;
    int second = 0;

    // Civil-days ordering key; exact for the proleptic Gregorian calendar.
    std::int64_t epoch_seconds() const {
        const int y = year - (month <= 2 ? 1 : 0);
        const int era = (y >= 0 ? y : y - 399) / 400;
        const unsigned yoe = static_cast<unsigned>(y - era * 400);
        const unsigned doy =
            (153u * static_cast<unsigned>(month + (month > 2 ? -3 : 9)) + 2u) / 5u +
            static_cast<unsigned>(day) - 1u;
        const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        const std::int64_t days =
            static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) -
            719468;
        return days * 86400 + hour * 3600 + minute * 60 + second;
    }

    bool operator==(const DateTime&) const = default;
};

inline int days_in_month(int year, int month) {
    static const int lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (month == 2) {
        const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        return leap ? 29 : 28;
    }
    return lengths[month - 1];
}

inline bool valid_datetime(const DateTime& dt) {
    return dt.month >= 1 && dt.month <= 12 && dt.day >= 1 &&
           dt.day <= days_in_month(dt.year, dt.month) && dt.hour >= 0 &&
           dt.hour <= 23 && dt.minute >= 0 && dt.minute <= 59 && dt.second >= 0 &&
           dt.second <= 59;
}

// Minimal strptime-style parser: %Y %y %m %d %H %M %S plus literal
// characters. Returns nullopt with a diagnostic on mismatch.
inline std::optional<DateTime> parse_datetime(const std::string& text,
                                              const std::string& format,
                                              std::string* error = nullptr) {
    DateTime dt;
    std::size_t ti = 0;
    const auto fail = [&](const std::string& why) -> std::optional<DateTime> {
        if (error) *error = why + " in '" + text + "' (format '" + format + "')";
        return std::nullopt;
    };
    const auto read_int = [&](int width, int& out) -> bool {
        int value = 0, digits = 0;
        while (digits < width && ti < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[ti]))) {
            value = value * 10 + (text[ti] - '0');
            ++ti;
            ++digits;
        }
        if (digits == 0) return false;
        out = value;
        return true;
    };
    for (std::size_t fi = 0; fi < format.size(); ++fi) {
        if (format[fi] != '%') {
            if (ti >= text.size() || text[ti] != format[fi])
                return fail("literal mismatch");
            ++ti;
            continue;
        }
        if (++fi >= format.size()) return fail("dangling %");
        int v = 0;
        switch (format[fi]) {
            case 'Y':
                if (!read_int(4, v)) return fail("bad year");
                dt.year = v;
                break;
            case 'y':
                if (!read_int(2, v)) return fail("bad year");
                dt.year = v + (v < 70 ? 2000 : 1900);
                break;
            case 'm':
                if (!read_int(2, v)) return fail("bad month");
                dt.month = v;
                break;
            case 'd':
                if (!read_int(2, v)) return fail("bad day");
                dt.day = v;
                break;
            case 'H':
                if (!read_int(2, v)) return fail("bad hour");
                dt.hour = v;
                break;
            case 'M':
                if (!read_int(2, v)) return fail("bad minute");
                dt.minute = v;
                break;
            case 'S':
                if (!read_int(2, v)) return fail("bad second");
                dt.second = v;
                break;
            case '%':
                if (ti >= text.size() || text[ti] != '%') return fail("literal mismatch");
                ++ti;
                break;
            default:
                return fail(std::string("unsupported directive %") + format[fi]);
        }
    }
    if (ti != text.size()) return fail("trailing characters");
    if (!valid_datetime(dt)) return fail("out-of-range field");
    return dt;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct EventRecord {
    std::string precinct;
    std::string premises;
    DateTime timestamp;
    std::string category;
};

inline int slot_of_timestamp(const DateTime& ts) {
    if (!valid_datetime(ts)) throw data_error("slot_of_timestamp: invalid timestamp");
    return ts.hour / 3;
}

struct EventClass {
    int slot = 0;
    std::string category;

    bool operator==(const EventClass&) const = default;
    auto operator<=>(const EventClass& o) const {
        if (auto c = category <=> o.category; c != 0) return c;
        return slot <=> o.slot;
    }
};

struct Vocabulary {
    std::vector<EventClass> classes;            // id -> class
    std::map<EventClass, int> class_to_id;      // class -> id
    std::vector<std::int64_t> frequency;        // id -> training-position count
    int pad_id = 0;
    int mask_id = 0;

    int size() const { return static_cast<int>(classes.size()); }
    // embedding table width: real classes plus PAD and MASK
    int extended_size() const { return size() + 2; }

    int id_of(const EventClass& c) const {
        auto it = class_to_id.find(c);
        if (it == class_to_id.end()) throw data_error("vocabulary: unknown event class");
        return it->second;
    }
};

// Ids are assigned in (category, slot) order so builds are stable against
// record permutations. Frequencies start at zero; the dataset pipeline fills
// them from training-window positions once the split exists.
inline Vocabulary build_vocabulary(const std::vector<EventRecord>& records) {
    if (records.empty()) throw data_error("build_vocabulary: no records");
    std::set<EventClass> seen;
    for (const auto& r : records)
        seen.insert(EventClass{slot_of_timestamp(r.timestamp), r.category});
    Vocabulary vocab;
    vocab.classes.assign(seen.begin(), seen.end());
    for (int i = 0; i < static_cast<int>(vocab.classes.size()); ++i)
        vocab.class_to_id.emplace(vocab.classes[static_cast<std::size_t>(i)], i);
    vocab.frequency.assign(vocab.classes.size(), 0);
    vocab.pad_id = vocab.size();
    vocab.mask_id = vocab.size() + 1;
    return vocab;
}

struct SpotSequence {
    std::string precinct;
    std::string premises;
    std::vector<int> events; // class ids, chronological

    std::string key() const { return precinct + "\x1f" + premises; }
};

struct BuildReport {
    std::size_t spots_dropped = 0;
    std::size_t records_dropped = 0;
};

// Groups records by spot, orders each group chronologically (stable on the
// input order for equal timestamps) and drops spots with fewer than
// min_events events.
inline std::vector<SpotSequence> build_sequences(
    const std::vector<EventRecord>& records, const Vocabulary& vocab,
    int min_events = 5, BuildReport* report = nullptr) {
    struct Item {
        std::int64_t when;
        std::size_t order;
        int id;
    };
    std::map<std::pair<std::string, std::string>, std::vector<Item>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const int id = vocab.id_of(EventClass{slot_of_timestamp(r.timestamp), r.category});
        groups[{r.precinct, r.premises}].push_back(
            Item{r.timestamp.epoch_seconds(), i, id});
    }
    std::vector<SpotSequence> out;
    for (auto& [key, items] : groups) {
        if (static_cast<int>(items.size()) < min_events) {
            if (report) {
                report->spots_dropped += 1;
                report->records_dropped += items.size();
            }
            continue;
        }
        std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
            if (a.when != b.when) return a.when < b.when;
            return a.order < b.order;
        });
        SpotSequence seq;
        seq.precinct = key.first;
        seq.premises = key.second;
        seq.events.reserve(items.size());
        for (const auto& it : items) seq.events.push_back(it.id);
        out.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Leave-last-out split and right-to-left windowing
// ---------------------------------------------------------------------------

struct TrainWindow {
    std::vector<int> input; // length <= L-1
    int target = 0;
};

struct EvalPair {
    std::string spot_key;
    std::vector<int> history; // full history; truncated to model length later
    int target = 0;
    std::vector<int> negatives;
};

struct SplitContribution {
    EvalPair test;
    EvalPair val;
    std::vector<TrainWindow> train; // leftmost window last
};

// Last event is the test target, second-to-last the validation target; the
// remaining prefix tiles right-to-left into non-overlapping chunks of at
// most max_len events, each contributing (chunk minus last, last). Chunks
// with a single event carry no history and are skipped.
inline SplitContribution split_and_window(const SpotSequence& seq, int max_len = 200) {
    const int n = static_cast<int>(seq.events.size());
    if (n < 5) throw data_error("split_and_window: sequence shorter than 5");
    if (max_len < 2) throw config_error("split_and_window: max_len must be >= 2");

    SplitContribution out;
    out.test.spot_key = seq.key();
    out.test.history.assign(seq.events.begin(), seq.events.end() - 1);
    out.test.target = seq.events[static_cast<std::size_t>(n - 1)];
    out.val.spot_key = seq.key();
    out.val.history.assign(seq.events.begin(), seq.events.end() - 2);
    out.val.target = seq.events[static_cast<std::size_t>(n - 2)];

    const int prefix = n - 2;
    int end = prefix;
    while (end > 0) {
        const int start = std::max(0, end - max_len);
        const int len = end - start;
        if (len >= 2) {
            TrainWindow w;
            w.input.assign(seq.events.begin() + start, seq.events.begin() + end - 1);
            w.target = seq.events[static_cast<std::size_t>(end - 1)];
            out.train.push_back(std::move(w));
        }
        end = start;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Popularity-based negative sampling
// ---------------------------------------------------------------------------

namespace detail {
inline warn_limiter warn_few_negatives{3};
}

// Samples n distinct class ids the spot never interacted with, without
// replacement, with probability proportional to frequency (optionally +1
// smoothed). Returns fewer than n when the eligible pool runs dry.
inline std::vector<int> popularity_negatives(const Vocabulary& vocab,
                                             const std::unordered_set<int>& spot_history,
                                             int n, rng_t& rng,
                                             bool smoothing = false) {
    std::vector<int> ids;
    std::vector<double> weights;
    for (int i = 0; i < vocab.size(); ++i) {
        if (spot_history.count(i)) continue;
        const double w =
            static_cast<double>(vocab.frequency[static_cast<std::size_t>(i)]) +
            (smoothing ? 1.0 : 0.0);
        if (w <= 0.0) continue;
        ids.push_back(i);
        weights.push_back(w);
    }
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(n));
    // sequential weighted draws without replacement
    double total = 0.0;
    for (double w : weights) total += w;
    std::vector<bool> used(ids.size(), false);
    for (int k = 0; k < n && total > 0.0; ++k) {
        double u = uniform01(rng) * total;
        std::size_t pick = ids.size();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (used[i]) continue;
            if (u < weights[i]) {
                pick = i;
                break;
            }
            u -= weights[i];
        }
        if (pick == ids.size()) { // numeric edge: take the last unused
            for (std::size_t i = ids.size(); i-- > 0;)
                if (!used[i]) {
                    pick = i;
                    break;
                }
            if (pick == ids.size()) break;
        }
        used[pick] = true;
        total -= weights[pick];
        chosen.push_back(ids[pick]);
    }
    if (static_cast<int>(chosen.size()) < n)
        detail::warn_few_negatives("only %zu of %d negatives available", chosen.size(), n);
    return chosen;
}

// ---------------------------------------------------------------------------
// Synthetic switching-intent generator
// ---------------------------------------------------------------------------

struct SynthParams {
    int n_spots = 200;
    int n_classes = 40;
    double switch_prob = 0.3;
    int len_lo = 20;
    int len_hi = 60;

    void validate() const {
        if (n_spots < 1) throw config_error("synth: n_spots must be >= 1");
        if (n_classes < 4) throw config_error("synth: n_classes must be >= 4");
        if (switch_prob < 0.0 || switch_prob > 1.0)
            throw config_error("synth: switch_prob must be in [0,1]");
        if (len_lo < 5 || len_hi < len_lo)
            throw config_error("synth: need 5 <= len_lo <= len_hi");
    }
};

// Each spot follows a hidden Markov process over 2-4 latent intents; every
// intent is a sparse distribution over classes. A class id encodes both the
// time slot (id mod 8) and the category (id div 8) so the class count is
// exact. Timestamps advance one day per event, keeping emission order
// chronological.
inline std::vector<EventRecord> synth_generate(const SynthParams& params, rng_t& rng) {
    params.validate();
    std::vector<EventRecord> records;

    const auto class_record = [&](int spot, int cls, int step) {
        EventRecord r;
        r.precinct = "P" + std::to_string(spot % 10);
        char buf[16];
        std::snprintf(buf, sizeof buf, "spot-%05d", spot);
        r.premises = buf;
        r.category = "C" + std::to_string(cls / 8);
        DateTime dt;
        dt.year = 2016;
        dt.month = 1;
        dt.day = 1;
        // roll forward `step` days
        int extra = step;
        while (extra > 0) {
            const int room = days_in_month(dt.year, dt.month) - dt.day;
            if (extra <= room) {
                dt.day += extra;
                extra = 0;
            } else {
                extra -= room + 1;
                dt.day = 1;
                if (++dt.month > 12) {
                    dt.month = 1;
                    ++dt.year;
                }
            }
        }
        dt.hour = 3 * (cls % 8);
        dt.minute = static_cast<int>(rng() % 60);
        r.timestamp = dt;
        return r;
    };

    for (int spot = 0; spot < params.n_spots; ++spot) {
        const int n_intents = 2 + static_cast<int>(rng() % 3);
        const int support = std::max(2, params.n_classes / 5);
        std::vector<std::vector<double>> intent_cdf;
        std::vector<std::vector<int>> intent_classes;
        for (int i = 0; i < n_intents; ++i) {
            std::vector<int> all(static_cast<std::size_t>(params.n_classes));
            std::iota(all.begin(), all.end(), 0);
            std::shuffle(all.begin(), all.end(), rng);
            std::vector<int> cls(all.begin(), all.begin() + support);
            std::vector<double> w(static_cast<std::size_t>(support));
            double total = 0.0;
            for (auto& v : w) {
                v = -std::log(std::max(uniform01(rng), 1e-300));
                total += v;
            }
            double acc = 0.0;
            for (auto& v : w) {
                acc += v / total;
                v = acc;
            }
            intent_cdf.push_back(std::move(w));
            intent_classes.push_back(std::move(cls));
        }
        const int len = params.len_lo +
                        static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                     params.len_hi - params.len_lo + 1));
        int intent = static_cast<int>(rng() % static_cast<std::uint64_t>(n_intents));
        for (int step = 0; step < len; ++step) {
            if (step > 0 && n_intents > 1 && uniform01(rng) < params.switch_prob) {
                const int shift = 1 + static_cast<int>(
                                          rng() % static_cast<std::uint64_t>(n_intents - 1));
                intent = (intent + shift) % n_intents;
            }
            const auto& cdf = intent_cdf[static_cast<std::size_t>(intent)];
            const double u = uniform01(rng);
            std::size_t pick = 0;
            while (pick + 1 < cdf.size() && u >= cdf[pick]) ++pick;
            const int cls = intent_classes[static_cast<std::size_t>(intent)][pick];
            records.push_back(class_record(spot, cls, step));
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Delimited-text ingestion
// ---------------------------------------------------------------------------

struct ColumnMap {
    std::string precinct = "precinct";
    std::string premises = "premises";
    std::string timestamp = "timestamp";
    std::string category = "category";
};

struct ReadOptions {
    char delimiter = ',';
    std::string timestamp_format = "%Y-%m-%d %H:%M";
    ColumnMap columns;
};

struct ReadReport {
    std::size_t parsed = 0;
    std::size_t rejected = 0;
    std::vector<std::string> sample_errors; // first few diagnostics
};

namespace detail {
// One delimited row honoring double-quote escaping.
inline std::vector<std::string> split_row(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == delim) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}
} // namespace detail

inline std::vector<EventRecord> read_records(std::istream& in,
                                             const ReadOptions& options,
                                             ReadReport* report = nullptr) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("read_records: empty input");
    const auto header = detail::split_row(line, options.delimiter);
    const auto column_index = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw data_error("read_records: missing column '" + name + "' in header");
    };
    const int ci_precinct = column_index(options.columns.precinct);
    const int ci_premises = column_index(options.columns.premises);
    const int ci_timestamp = column_index(options.columns.timestamp);
    const int ci_category = column_index(options.columns.category);
    const int needed = std::max({ci_precinct, ci_premises, ci_timestamp, ci_category});

    std::vector<EventRecord> records;
    std::size_t line_no = 1;
    const auto reject = [&](const std::string& why) {
        if (!report) return;
        report->rejected += 1;
        if (report->sample_errors.size() < 5)
            report->sample_errors.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_row(line, options.delimiter);
        if (static_cast<int>(fields.size()) <= needed) {
            reject("too few columns");
            continue;
        }
        EventRecord r;
        r.precinct = fields[static_cast<std::size_t>(ci_precinct)];
        r.premises = fields[static_cast<std::size_t>(ci_premises)];
        r.category = fields[static_cast<std::size_t>(ci_category)];
        if (r.precinct.empty() || r.premises.empty() || r.category.empty()) {
            reject("empty key field");
            continue;
        }
        std::string err;
        const auto ts = parse_datetime(fields[static_cast<std::size_t>(ci_timestamp)],
                                       options.timestamp_format, &err);
        if (!ts) {
            reject(err);
            continue;
        }
        r.timestamp = *ts;
        records.push_back(std::move(r));
        if (report) report->parsed += 1;
    }
    return records;
}

} // namespace crimealarm::data

#endif // CRIMEALARM_EVENT_DATA_HPP
