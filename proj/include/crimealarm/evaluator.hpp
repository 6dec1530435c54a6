#ifndef CRIMEALARM_EVALUATOR_HPP
#define CRIMEALARM_EVALUATOR_HPP

#include <cmath>
#include <map>
#include <vector>

#include "crimealarm/common.hpp"
#include "crimealarm/encoders.hpp"
#include "crimealarm/event_data.hpp"

// Leave-last-out ranking evaluation: the ground-truth score competes against
// its sampled negatives; ranks aggregate into HR@N, NDCG@N and MRR.

namespace crimealarm::metrics {

struct RankingMetrics {
    std::map<int, double> hr;   // N -> mean hit rate
    std::map<int, double> ndcg; // N -> mean discounted gain
    double mrr = 0.0;
    std::size_t count = 0;
};

// 1-based rank of the target among the candidate scores. Ties count against
// the target, so the rank is deterministic and pessimistic.
inline int rank_of_target(const std::vector<double>& scores, std::size_t target_pos) {
    if (target_pos >= scores.size())
        throw numeric_error("rank_of_target: target position out of range");
    const double s = scores[target_pos];
    if (!std::isfinite(s)) throw numeric_error("rank_of_target: non-finite score");
    int rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i == target_pos) continue;
        if (!std::isfinite(scores[i]))
            throw numeric_error("rank_of_target: non-finite score");
        if (scores[i] >= s) ++rank;
    }
    return rank;
}

inline RankingMetrics metrics_from_ranks(const std::vector<int>& ranks,
                                         const std::vector<int>& Ns = {5, 10}) {
    if (ranks.empty()) throw numeric_error("metrics_from_ranks: no ranks");
    RankingMetrics m;
    m.count = ranks.size();
    for (int N : Ns) {
        m.hr[N] = 0.0;
        m.ndcg[N] = 0.0;
    }
    for (int r : ranks) {
        if (r < 1) throw numeric_error("metrics_from_ranks: rank < 1");
        m.mrr += 1.0 / r;
        for (int N : Ns) {
            if (r <= N) {
                m.hr[N] += 1.0;
                m.ndcg[N] += 1.0 / std::log2(static_cast<double>(r) + 1.0);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(ranks.size());
    m.mrr *= inv;
    for (int N : Ns) {
        m.hr[N] *= inv;
        m.ndcg[N] *= inv;
    }
    return m;
}

struct EvaluateOptions {
    int batch_size = 256;
    std::vector<int> Ns = {5, 10};
    bool full_ranking = false; // rank against every class instead of negatives
};

// Scores each pair's history at the prediction slot and ranks the target
// against its fixed negatives (or the whole vocabulary). Deterministic given
// the negatives; pairs are scored in order and reduced in order.
inline RankingMetrics evaluate(const enc::Encoder& encoder,
                               const std::vector<data::EvalPair>& pairs,
                               const EvaluateOptions& options = {}) {
    if (pairs.empty()) throw data_error("evaluate: no pairs");
    const auto& cfg = encoder.config();
    std::vector<int> ranks;
    ranks.reserve(pairs.size());

    for (std::size_t begin = 0; begin < pairs.size();
         begin += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t end =
            std::min(pairs.size(), begin + static_cast<std::size_t>(options.batch_size));
        std::vector<std::vector<int>> histories;
        histories.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i)
            histories.push_back(pairs[i].history);
        const auto batch =
            enc::make_batch(histories, cfg.pad_id(), cfg.mask_id(), cfg.max_len);
        const Mat logits = encoder.encode(batch);

        for (std::size_t i = begin; i < end; ++i) {
            const auto& pair = pairs[i];
            const int row = static_cast<int>(i - begin);
            if (pair.target < 0 || pair.target >= cfg.vocab_size)
                throw data_error("evaluate: target outside the vocabulary");
            std::vector<double> scores;
            if (options.full_ranking) {
                scores.resize(static_cast<std::size_t>(cfg.vocab_size));
                for (int c = 0; c < cfg.vocab_size; ++c)
                    scores[static_cast<std::size_t>(c)] = logits(row, c);
                ranks.push_back(rank_of_target(scores, static_cast<std::size_t>(pair.target)));
            } else {
                if (pair.negatives.empty())
                    throw data_error("evaluate: pair is missing its negatives");
                scores.push_back(logits(row, pair.target));
                for (int neg : pair.negatives) {
                    if (neg < 0 || neg >= cfg.vocab_size)
                        throw data_error("evaluate: negative outside the vocabulary");
                    scores.push_back(logits(row, neg));
                }
                ranks.push_back(rank_of_target(scores, 0));
            }
        }
    }
    return metrics_from_ranks(ranks, options.Ns);
}

} // namespace crimealarm::metrics

#endif // CRIMEALARM_EVALUATOR_HPP
