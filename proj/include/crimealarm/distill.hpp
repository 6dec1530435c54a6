#ifndef CRIMEALARM_DISTILL_HPP
#define CRIMEALARM_DISTILL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "crimealarm/common.hpp"

// Curriculum mutual-distillation losses. Probability decoupling into a
// target/rest pair plus a renormalized non-target distribution, a
// simple-to-difficult target loss with batch-level confidence truncation and
// a progress-gated phase switch, frequency-guided curriculum masking of the
// non-target distribution, the decoupled-KD baseline, peer-group ensembling
// and the joint objective. Every loss ships with its analytic gradient with
// respect to the student logits; teacher quantities are constants.

namespace crimealarm::distill {

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kMaskOffset = 1000.0;

// 1 = masked (excluded from the non-target distribution).
using Mask = std::vector<std::uint8_t>;

enum class Phase { simple, difficult };

struct DistillConfig {
    double alpha = 5.0;    // weight of the simple target term
    double beta = 1.0;     // weight of the non-target term
    double gamma = 1.0;    // difficulty exponent on (1 - teacher prob)
    double epsilon = 0.01; // truncation proportion of the batch
    double tau0 = 0.2;     // progress below which training is always simple
    double tau1 = 0.7;     // progress above which training is always difficult
    double temperature = 1.0;
    int peers = 2; // K
    // Ablation switches. no_ctc keeps only the simple branch of the target
    // loss; no_cnc replaces curriculum masking with the conventional
    // target-only mask; no_tc / no_nc drop the whole term.
    bool no_ctc = false;
    bool no_tc = false;
    bool no_cnc = false;
    bool no_nc = false;

    void validate() const {
        if (!(tau0 > 0.0 && tau0 < tau1 && tau1 < 1.0))
            throw config_error("distill: need 0 < tau0 < tau1 < 1");
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
            throw config_error("distill: alpha, beta, gamma must be >= 0");
        if (epsilon < 0.0 || epsilon >= 1.0)
            throw config_error("distill: epsilon must be in [0, 1)");
        if (peers < 2)
            throw config_error("distill: need at least 2 peers");
        if (temperature <= 0.0)
            throw config_error("distill: temperature must be > 0");
    }
};

struct CurriculumState {
    int epoch = 0;        // pi
    int total_epochs = 1; // Pi

    double progress() const { return static_cast<double>(epoch) / total_epochs; }
};

namespace detail {
inline warn_limiter warn_clamped_log{3};
}

inline double clamped_log(double p) {
    if (p <= kLogFloor) {
        detail::warn_clamped_log("probability %.3e clamped to %.0e before log", p,
                                 kLogFloor);
        p = kLogFloor;
    }
    return std::log(p);
}

// Stable softmax with max subtraction.
inline Vec softmax_probs(const Vec& z) {
    if (z.size() == 0) throw numeric_error("softmax: empty logit vector");
    if (!z.allFinite()) throw numeric_error("softmax: non-finite logits");
    const double m = z.maxCoeff();
    Vec p = (z.array() - m).exp();
    p /= p.sum();
    return p;
}

struct TargetSplit {
    double p_target = 0.0; // mass on the ground-truth class
    double p_rest = 0.0;   // summed mass on everything else
};

// Splits softmax(z) into (target, rest). The rest mass is a literal sum so
// the p_target + p_rest = 1 constraint is an honest floating-point check.
inline TargetSplit decouple_target(const Vec& z, int target) {
    if (target < 0 || target >= z.size())
        throw numeric_error("decouple_target: target index out of range");
    const Vec p = softmax_probs(z);
    TargetSplit s;
    s.p_target = p(target);
    s.p_rest = p.sum() - p(target);
    return s;
}

inline Mask conventional_mask(int n_classes, int target) {
    Mask c(static_cast<std::size_t>(n_classes), 0);
    c.at(static_cast<std::size_t>(target)) = 1;
    return c;
}

inline int count_masked_nontargets(const Mask& c, int target) {
    int m = 0;
    for (int i = 0; i < static_cast<int>(c.size()); ++i)
        if (i != target && c[static_cast<std::size_t>(i)]) ++m;
    return m;
}

// softmax(z - 1000*c) with restricted semantics: masked entries are forced
// to exact zero and the unmasked remainder is renormalized, so the vector is
// a proper distribution even under extreme logits.
inline Vec nontarget_distribution(const Vec& z, int target, const Mask& c) {
    const int n = static_cast<int>(z.size());
    if (static_cast<int>(c.size()) != n)
        throw numeric_error("nontarget_distribution: mask length mismatch");
    if (target < 0 || target >= n)
        throw numeric_error("nontarget_distribution: target index out of range");
    if (!c[static_cast<std::size_t>(target)])
        throw numeric_error("nontarget_distribution: target must be masked");
    if (count_masked_nontargets(c, target) >= n - 1)
        throw numeric_error("nontarget_distribution: all non-target entries masked");
    if (!z.allFinite()) throw numeric_error("nontarget_distribution: non-finite logits");

    Vec shifted = z;
    for (int i = 0; i < n; ++i)
        if (c[static_cast<std::size_t>(i)]) shifted(i) -= kMaskOffset;
    Vec q = softmax_probs(shifted);
    double kept = 0.0;
    for (int i = 0; i < n; ++i) {
        if (c[static_cast<std::size_t>(i)])
            q(i) = 0.0;
        else
            kept += q(i);
    }
    if (!(kept > 0.0))
        throw numeric_error("nontarget_distribution: zero unmasked mass");
    q /= kept;
    return q;
}

// -alpha * p~ * log(p): the early-phase target term, weighted by the
// teacher's confidence.
inline double loss_simple_target(double teacher_p, double student_p, double alpha) {
    if (teacher_p == 0.0) return 0.0;
    return -alpha * teacher_p * clamped_log(student_p);
}

// -p~_rest * log(p_rest): the rest-mass companion of the simple term. It is
// what suppresses low-confidence samples during early training and makes the
// degraded configuration coincide with the decoupled-KD baseline.
inline double loss_rest_target(double teacher_rest, double student_rest) {
    if (teacher_rest == 0.0) return 0.0;
    return -teacher_rest * clamped_log(student_rest);
}

// -(1 - p~)^gamma * log(p): the late-phase target term, upweighting samples
// the teacher finds difficult.
inline double loss_difficult_target(double teacher_p, double student_p, double gamma) {
    const double w = std::pow(1.0 - teacher_p, gamma);
    if (w == 0.0) return 0.0;
    return -w * clamped_log(student_p);
}

// Batch confidence truncation: a sample whose target probability ranks in
// the bottom epsilon*|B| for EVERY peer is treated as noise and its teacher
// distribution collapses to certainty (p~ = 1, rest = 0). Ranks are 0-based
// ascending with ties broken by sample index.
inline std::vector<std::uint8_t>
truncation_flags(const std::vector<std::vector<double>>& peer_target_probs,
                 double epsilon) {
    if (peer_target_probs.empty())
        throw numeric_error("truncation_flags: no peers");
    const std::size_t batch = peer_target_probs.front().size();
    for (const auto& v : peer_target_probs)
        if (v.size() != batch)
            throw numeric_error("truncation_flags: ragged batch");

    std::vector<std::uint8_t> flags(batch, 1);
    const double threshold = epsilon * static_cast<double>(batch);
    std::vector<std::size_t> order(batch);
    for (const auto& probs : peer_target_probs) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return probs[a] < probs[b];
        });
        std::vector<std::uint8_t> low(batch, 0);
        for (std::size_t r = 0; r < batch; ++r) {
            if (static_cast<double>(r) < threshold) low[order[r]] = 1;
        }
        for (std::size_t m = 0; m < batch; ++m) flags[m] &= low[m];
    }
    return flags;
}

inline std::vector<std::vector<double>>
truncate_teacher(const std::vector<std::vector<double>>& peer_target_probs,
                 double epsilon) {
    auto flags = truncation_flags(peer_target_probs, epsilon);
    auto adjusted = peer_target_probs;
    for (auto& probs : adjusted)
        for (std::size_t m = 0; m < probs.size(); ++m)
            if (flags[m]) probs[m] = 1.0;
    return adjusted;
}

// Progress gate over the target loss. In the intermediate window one uniform
// draw per iteration picks the branch; P(simple) = 1 - t.
inline Phase phase_gate(double t, double tau0, double tau1, double rand_draw) {
    if (t < tau0) return Phase::simple;
    if (t > tau1) return Phase::difficult;
    return t < rand_draw ? Phase::simple : Phase::difficult;
}

// Number of masked non-target classes at progress t.
inline int masked_nontarget_count(double t, double tau1, int n_classes) {
    if (t >= tau1) return 0;
    const long long raw = std::llround((1.0 - t) * static_cast<double>(n_classes));
    return static_cast<int>(std::min<long long>(n_classes - 1, std::max<long long>(0, raw)));
}

// Random curriculum mask: the target is always masked; of the non-targets,
// kept = |I|-1-masked entries are drawn without replacement with probability
// proportional to (frequency + 1), so frequent classes join the distillation
// support first.
inline Mask curriculum_mask(double t, double tau1, int target,
                            const std::vector<std::int64_t>& frequencies,
                            rng_t& rng) {
    const int n = static_cast<int>(frequencies.size());
    if (target < 0 || target >= n)
        throw numeric_error("curriculum_mask: target index out of range");
    const int masked = masked_nontarget_count(t, tau1, n);
    const int kept = n - 1 - masked;

    Mask c(static_cast<std::size_t>(n), 1);
    if (kept <= 0) return c; // only the target unmaskable; caller skips the loss

    // Weighted sampling without replacement via exponential keys: keep the
    // `kept` largest log(u)/w.
    std::vector<std::pair<double, int>> keys;
    keys.reserve(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        if (i == target) continue;
        const double w = static_cast<double>(frequencies[static_cast<std::size_t>(i)]) + 1.0;
        double u = uniform01(rng);
        if (u <= 0.0) u = std::numeric_limits<double>::min();
        keys.emplace_back(std::log(u) / w, i);
    }
    std::stable_sort(keys.begin(), keys.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int r = 0; r < kept; ++r)
        c[static_cast<std::size_t>(keys[static_cast<std::size_t>(r)].second)] = 0;
    return c;
}

// beta * sum_i -q~_i log(q_i) over the unmasked support shared by both
// distributions.
inline double loss_nontarget(const Vec& q_teacher, const Vec& q_student,
                             double beta, const Mask& c) {
    const int n = static_cast<int>(q_student.size());
    if (q_teacher.size() != q_student.size() ||
        static_cast<int>(c.size()) != n)
        throw numeric_error("loss_nontarget: size mismatch");
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (c[static_cast<std::size_t>(i)]) {
            if (q_teacher(i) != 0.0 || q_student(i) != 0.0)
                throw numeric_error("loss_nontarget: mass on masked entry (support mismatch)");
            continue;
        }
        if (q_teacher(i) == 0.0) continue;
        loss -= q_teacher(i) * clamped_log(q_student(i));
    }
    return beta * loss;
}

// Decoupled-KD baseline, self-contained so it can act as an independent
// oracle for the degraded curriculum loss: target pair cross-entropy plus
// beta times the non-target cross-entropy, teacher constant.
inline double dkd_loss(const Vec& z_student, const Vec& z_teacher, int target,
                       double beta) {
    const int n = static_cast<int>(z_student.size());
    if (z_teacher.size() != n)
        throw numeric_error("dkd_loss: logit size mismatch");
    if (target < 0 || target >= n)
        throw numeric_error("dkd_loss: target index out of range");
    if (!z_student.allFinite() || !z_teacher.allFinite())
        throw numeric_error("dkd_loss: non-finite logits");

    const auto probs = [](const Vec& z) {
        const double m = z.maxCoeff();
        Vec p = (z.array() - m).exp();
        p /= p.sum();
        return p;
    };
    const Vec ps = probs(z_student);
    const Vec pt = probs(z_teacher);

    const double ps_target = ps(target);
    const double ps_rest = ps.sum() - ps_target;
    const double pt_target = pt(target);
    const double pt_rest = pt.sum() - pt_target;

    double loss = -pt_target * clamped_log(ps_target) - pt_rest * clamped_log(ps_rest);

    // Non-target distributions renormalized over everything but the target.
    double nt = 0.0;
    const double st = ps_rest;
    const double tt = pt_rest;
    if (st > 0.0 && tt > 0.0) {
        for (int i = 0; i < n; ++i) {
            if (i == target) continue;
            const double qt = pt(i) / tt;
            if (qt == 0.0) continue;
            nt -= qt * clamped_log(ps(i) / st);
        }
    }
    return loss + beta * nt;
}

// ---------------------------------------------------------------------------
// Gradients with respect to the student logits. Teachers are constants.
// Log-floor clamping only guards the loss values; the gradients use the
// bounded softmax cross-entropy forms, which stay finite on their own.
// ---------------------------------------------------------------------------

inline Vec onehot(int n, int idx) {
    Vec e = Vec::Zero(n);
    e(idx) = 1.0;
    return e;
}

inline Vec ce_label_grad(const Vec& z_student, int label) {
    Vec g = softmax_probs(z_student);
    g(label) -= 1.0;
    return g;
}

inline double ce_label_loss(const Vec& z_student, int label) {
    const Vec p = softmax_probs(z_student);
    return -clamped_log(p(label));
}

inline Vec loss_simple_target_grad(const Vec& z_student, double teacher_p,
                                   int target, double alpha) {
    const Vec p = softmax_probs(z_student);
    return alpha * teacher_p * (p - onehot(static_cast<int>(p.size()), target));
}

inline Vec loss_rest_target_grad(const Vec& z_student, double teacher_rest,
                                 int target) {
    const int n = static_cast<int>(z_student.size());
    const Vec p = softmax_probs(z_student);
    const double p_target = p(target);
    const double p_rest = std::max(p.sum() - p_target, kLogFloor);
    const double scale = teacher_rest * p_target / p_rest;
    return scale * (onehot(n, target) - p);
}

inline Vec loss_difficult_target_grad(const Vec& z_student, double teacher_p,
                                      int target, double gamma) {
    const double w = std::pow(1.0 - teacher_p, gamma);
    const Vec p = softmax_probs(z_student);
    return w * (p - onehot(static_cast<int>(p.size()), target));
}

inline Vec loss_nontarget_grad(const Vec& z_student, const Vec& q_teacher,
                               int target, double beta, const Mask& c) {
    const Vec q = nontarget_distribution(z_student, target, c);
    Vec g = beta * (q - q_teacher);
    for (int i = 0; i < static_cast<int>(c.size()); ++i)
        if (c[static_cast<std::size_t>(i)]) g(i) = 0.0;
    return g;
}

inline Vec dkd_loss_grad(const Vec& z_student, const Vec& z_teacher, int target,
                         double beta) {
    const int n = static_cast<int>(z_student.size());
    const TargetSplit teacher = decouple_target(z_teacher, target);
    Vec g = loss_simple_target_grad(z_student, teacher.p_target, target, 1.0);
    g += loss_rest_target_grad(z_student, teacher.p_rest, target);
    const Mask c = conventional_mask(n, target);
    const Vec q_teacher = nontarget_distribution(z_teacher, target, c);
    g += loss_nontarget_grad(z_student, q_teacher, target, beta, c);
    return g;
}

// ---------------------------------------------------------------------------
// Per-peer curriculum loss (ensemble over the other K-1 peers) and the joint
// objective.
// ---------------------------------------------------------------------------

struct PeerLossTerms {
    double tc = 0.0;      // target distillation (ensemble mean)
    double nc = 0.0;      // non-target distillation (ensemble mean)
    bool nc_active = false;
    Vec dz;               // d(tc + nc)/d z_student; empty unless requested
};

// Loss of peer k as a student against all other peers as teachers, for one
// sample. Teacher target splits must already carry the batch truncation
// adjustment; the mask is the iteration's shared curriculum mask for this
// sample. With the conventional-mask ablation, phase forced simple, alpha=1
// and no truncation this reduces to dkd_loss against each teacher.
inline PeerLossTerms crime_loss_peer(int k, const std::vector<Vec>& peer_logits,
                                     int target,
                                     const std::vector<TargetSplit>& adjusted_teacher,
                                     Phase phase, const Mask& mask,
                                     const DistillConfig& cfg,
                                     bool want_grad = false) {
    const int K = static_cast<int>(peer_logits.size());
    if (K < 2) throw numeric_error("crime_loss_peer: need at least 2 peers");
    if (k < 0 || k >= K) throw numeric_error("crime_loss_peer: peer index out of range");
    if (static_cast<int>(adjusted_teacher.size()) != K)
        throw numeric_error("crime_loss_peer: teacher splits size mismatch");

    const Vec& z = peer_logits[static_cast<std::size_t>(k)];
    const int n = static_cast<int>(z.size());
    const Phase effective = cfg.no_ctc ? Phase::simple : phase;

    PeerLossTerms out;
    if (want_grad) out.dz = Vec::Zero(n);

    const Mask& nc_mask = cfg.no_cnc ? conventional_mask(n, target) : mask;
    const bool nc_usable =
        !cfg.no_nc && count_masked_nontargets(nc_mask, target) < n - 1;

    TargetSplit student;
    if (!cfg.no_tc) student = decouple_target(z, target);
    Vec q_student;
    if (nc_usable) q_student = nontarget_distribution(z, target, nc_mask);

    const double norm = 1.0 / static_cast<double>(K - 1);
    for (int j = 0; j < K; ++j) {
        if (j == k) continue;
        const TargetSplit& teacher = adjusted_teacher[static_cast<std::size_t>(j)];
        if (!cfg.no_tc) {
            double tc_j = 0.0;
            if (effective == Phase::simple) {
                tc_j = loss_simple_target(teacher.p_target, student.p_target, cfg.alpha) +
                       loss_rest_target(teacher.p_rest, student.p_rest);
                if (want_grad) {
                    out.dz += norm * loss_simple_target_grad(z, teacher.p_target,
                                                             target, cfg.alpha);
                    out.dz += norm * loss_rest_target_grad(z, teacher.p_rest, target);
                }
            } else {
                tc_j = loss_difficult_target(teacher.p_target, student.p_target,
                                             cfg.gamma);
                if (want_grad)
                    out.dz += norm * loss_difficult_target_grad(z, teacher.p_target,
                                                                target, cfg.gamma);
            }
            out.tc += norm * tc_j;
        }
        if (nc_usable) {
            const Vec q_teacher = nontarget_distribution(
                peer_logits[static_cast<std::size_t>(j)], target, nc_mask);
            out.nc += norm * loss_nontarget(q_teacher, q_student, cfg.beta, nc_mask);
            if (want_grad)
                out.dz += norm * loss_nontarget_grad(z, q_teacher, target, cfg.beta,
                                                     nc_mask);
            out.nc_active = true;
        }
    }
    return out;
}

// Convenience overload drawing the phase and mask itself; the trainer draws
// once per iteration instead and uses the explicit form.
inline PeerLossTerms crime_loss_peer(int k, const std::vector<Vec>& peer_logits,
                                     int target, const DistillConfig& cfg,
                                     const CurriculumState& state,
                                     const std::vector<std::int64_t>& frequencies,
                                     rng_t& rng, bool want_grad = false) {
    const int K = static_cast<int>(peer_logits.size());
    if (K < 2) throw numeric_error("crime_loss_peer: need at least 2 peers");
    const double t = state.progress();
    const Phase phase = phase_gate(t, cfg.tau0, cfg.tau1, uniform01(rng));
    const Mask mask = curriculum_mask(t, cfg.tau1, target, frequencies, rng);

    std::vector<std::vector<double>> probs(static_cast<std::size_t>(K),
                                           std::vector<double>(1));
    std::vector<TargetSplit> splits(static_cast<std::size_t>(K));
    for (int j = 0; j < K; ++j) {
        splits[static_cast<std::size_t>(j)] =
            decouple_target(peer_logits[static_cast<std::size_t>(j)], target);
        probs[static_cast<std::size_t>(j)][0] =
            splits[static_cast<std::size_t>(j)].p_target;
    }
    const auto flags = truncation_flags(probs, cfg.epsilon);
    if (flags[0])
        for (auto& s : splits) s = TargetSplit{1.0, 0.0};
    return crime_loss_peer(k, peer_logits, target, splits, phase, mask, cfg,
                           want_grad);
}

struct JointBreakdown {
    std::vector<double> ce, tc, nc; // one entry per peer
    double total = 0.0;
    std::vector<Vec> dz; // per-peer gradient; empty unless requested
};

// Eq.-style joint objective for one sample: sum over peers of label
// cross-entropy plus the ensemble distillation terms. The temperature knob
// rescales only the distillation path; the label loss always sees the raw
// logits. Teacher splits are expected at the same temperature.
inline JointBreakdown joint_loss(const std::vector<Vec>& peer_logits, int label,
                                 const std::vector<TargetSplit>& adjusted_teacher,
                                 Phase phase, const Mask& mask,
                                 const DistillConfig& cfg,
                                 bool want_grad = false) {
    const int K = static_cast<int>(peer_logits.size());
    JointBreakdown out;
    out.ce.resize(static_cast<std::size_t>(K));
    out.tc.resize(static_cast<std::size_t>(K));
    out.nc.resize(static_cast<std::size_t>(K));
    if (want_grad) out.dz.resize(static_cast<std::size_t>(K));

    const double T = cfg.temperature;
    const bool distilling = K >= 2 && !(cfg.no_tc && cfg.no_nc);
    std::vector<Vec> scaled;
    if (distilling && T != 1.0) {
        scaled.reserve(static_cast<std::size_t>(K));
        for (const auto& z : peer_logits) scaled.push_back(z / T);
    }
    const std::vector<Vec>& distill_logits = scaled.empty() ? peer_logits : scaled;

    for (int k = 0; k < K; ++k) {
        const Vec& z = peer_logits[static_cast<std::size_t>(k)];
        out.ce[static_cast<std::size_t>(k)] = ce_label_loss(z, label);
        Vec g;
        if (want_grad) g = ce_label_grad(z, label);
        if (distilling) {
            PeerLossTerms terms = crime_loss_peer(k, distill_logits, label,
                                                  adjusted_teacher, phase, mask,
                                                  cfg, want_grad);
            out.tc[static_cast<std::size_t>(k)] = terms.tc;
            out.nc[static_cast<std::size_t>(k)] = terms.nc;
            if (want_grad) g += terms.dz / T;
        }
        out.total += out.ce[static_cast<std::size_t>(k)] +
                     out.tc[static_cast<std::size_t>(k)] +
                     out.nc[static_cast<std::size_t>(k)];
        if (want_grad) out.dz[static_cast<std::size_t>(k)] = std::move(g);
    }
    return out;
}

} // namespace crimealarm::distill

#endif // CRIMEALARM_DISTILL_HPP
