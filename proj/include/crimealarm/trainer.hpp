#ifndef CRIMEALARM_TRAINER_HPP
#define CRIMEALARM_TRAINER_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crimealarm/bundle.hpp"
#include "crimealarm/distill.hpp"
#include "crimealarm/encoders.hpp"
#include "crimealarm/evaluator.hpp"

// The training loop: epoch-granular curriculum progress, one phase draw and
// one curriculum mask per sample per iteration shared by all peers, batch
// confidence truncation, adaptive-moment updates with linear decay and
// global-norm clipping, per-epoch validation, and resumable checkpoints.
//
// Every random stream derives from (seed, purpose, epoch, step, ...), so a
// resumed run replays the exact streams of an uninterrupted one. Dropout
// streams are shared by the peers (identically initialized peers stay
// identical; regular peers differ through their parameters).

namespace crimealarm::train {

struct TrainerConfig {
    int peers = 2;          // K; 1 trains a plain cross-entropy baseline
    int total_epochs = 100; // Pi
    int batch_size = 256;
    double base_lr = 1e-3; // linear decay to zero over all steps
    double grad_clip = 5.0;
    std::uint64_t seed = 1;
    distill::DistillConfig distill;
    std::vector<enc::EncoderConfig> encoders; // one entry, or one per peer
    std::filesystem::path run_dir;            // empty: no checkpoints or logs
    int checkpoint_every = 1;                 // epochs
    bool evaluate_val = true;
    int eval_peer = 0; // exported for evaluation by default

    void validate() const {
        if (peers < 1) throw config_error("trainer: peers must be >= 1");
        if (total_epochs < 1) throw config_error("trainer: total_epochs must be >= 1");
        if (batch_size < 2) throw config_error("trainer: batch_size must be >= 2");
        if (base_lr <= 0.0) throw config_error("trainer: base_lr must be > 0");
        if (grad_clip <= 0.0) throw config_error("trainer: grad_clip must be > 0");
        if (encoders.empty())
            throw config_error("trainer: at least one encoder config required");
        if (encoders.size() != 1 && static_cast<int>(encoders.size()) != peers)
            throw config_error("trainer: encoder configs must match the peer count");
        if (peers >= 2) distill.validate();
        for (enc::EncoderConfig e : encoders) {
            if (e.vocab_size == 0) e.vocab_size = 2; // filled from the bundle later
            e.validate();
        }
        if (checkpoint_every < 1)
            throw config_error("trainer: checkpoint_every must be >= 1");
        if (eval_peer < 0 || eval_peer >= peers)
            throw config_error("trainer: eval_peer out of range");
    }
};

struct PeerTerms {
    double ce = 0.0;
    double tc = 0.0;
    double nc = 0.0;
};

struct StepResult {
    int epoch = 0;
    long long step = 0; // global step index
    double t = 0.0;
    distill::Phase phase = distill::Phase::simple;
    double lr = 0.0;
    std::vector<PeerTerms> peers;
    double total = 0.0;
};

struct EpochValidation {
    int epoch = 0;
    std::vector<double> ndcg5; // per peer
    double mean_ndcg5 = 0.0;
};

class Trainer {
public:
    Trainer(const data::DatasetBundle& bundle, TrainerConfig cfg)
        : bundle_(&bundle), cfg_(std::move(cfg)) {
        cfg_.validate();
        if (bundle.train.empty()) throw data_error("trainer: bundle has no windows");

        // replicate a single encoder config across peers; derive per-peer
        // init seeds where none was pinned
        std::vector<enc::EncoderConfig> configs;
        for (int k = 0; k < cfg_.peers; ++k) {
            enc::EncoderConfig e = cfg_.encoders.size() == 1
                                       ? cfg_.encoders.front()
                                       : cfg_.encoders[static_cast<std::size_t>(k)];
            if (e.vocab_size == 0) e.vocab_size = bundle.vocab.size();
            if (e.vocab_size != bundle.vocab.size())
                throw config_error("trainer: encoder vocab_size disagrees with bundle");
            if (e.init_seed == 0)
                e.init_seed = derive_seed(cfg_.seed, "init", static_cast<std::uint64_t>(k));
            configs.push_back(std::move(e));
        }
        int longest = 0;
        for (const auto& w : bundle.train)
            longest = std::max(longest, static_cast<int>(w.input.size()));
        model_len_ = longest + 1;
        for (auto& e : configs) model_len_ = std::min(model_len_, e.max_len);

        for (auto& e : configs) peers_.push_back(enc::make_encoder(e));
        adam_m_.resize(peers_.size());
        adam_v_.resize(peers_.size());
        for (std::size_t k = 0; k < peers_.size(); ++k) {
            peers_[k]->for_each_param([&](const std::string&, Mat& v, Mat&) {
                adam_m_[k].push_back(Mat::Zero(v.rows(), v.cols()));
                adam_v_[k].push_back(Mat::Zero(v.rows(), v.cols()));
            });
        }

        steps_per_epoch_ = (bundle.train.size() +
                            static_cast<std::size_t>(cfg_.batch_size) - 1) /
                           static_cast<std::size_t>(cfg_.batch_size);
        total_steps_ = static_cast<long long>(steps_per_epoch_) * cfg_.total_epochs;

        if (!cfg_.run_dir.empty()) {
            std::filesystem::create_directories(cfg_.run_dir);
            log_.open(cfg_.run_dir / "train_log.ndjson", std::ios::app);
        }
    }

    const TrainerConfig& config() const { return cfg_; }
    int peer_count() const { return static_cast<int>(peers_.size()); }
    enc::Encoder& peer(int k) { return *peers_.at(static_cast<std::size_t>(k)); }
    int epoch() const { return epoch_; }
    long long global_step() const { return global_step_; }
    int model_len() const { return model_len_; }
    const std::vector<StepResult>& history() const { return history_; }
    const std::vector<EpochValidation>& validation_history() const {
        return val_history_;
    }

    int select_peer_for_eval(int requested = -1) const {
        const int idx = requested < 0 ? cfg_.eval_peer : requested;
        if (idx < 0 || idx >= peer_count())
            throw config_error("select_peer_for_eval: peer index out of range");
        return idx;
    }

    double progress() const {
        return static_cast<double>(epoch_) / cfg_.total_epochs;
    }

    // One optimizer step over the given train-window indices.
    StepResult training_step(const std::vector<std::size_t>& window_idx) {
        const int B = static_cast<int>(window_idx.size());
        if (B < 1) throw data_error("training_step: empty batch");
        const int K = peer_count();
        const int n_classes = bundle_->vocab.size();
        const double t = progress();

        std::vector<std::vector<int>> histories;
        std::vector<int> labels;
        histories.reserve(static_cast<std::size_t>(B));
        for (std::size_t idx : window_idx) {
            const auto& w = bundle_->train.at(idx);
            histories.push_back(w.input);
            labels.push_back(w.target);
        }
        const auto batch = enc::make_batch(histories, bundle_->vocab.pad_id,
                                           bundle_->vocab.mask_id, model_len_);

        // pass 1: all peer logits under this step's dropout streams
        std::vector<Mat> logits(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            logits[static_cast<std::size_t>(k)].resize(B, n_classes);
            for (int r = 0; r < B; ++r) {
                rng_t drop = dropout_rng(r);
                logits[static_cast<std::size_t>(k)].row(r) =
                    peers_[static_cast<std::size_t>(k)]
                        ->forward_one(batch, r, true, &drop)
                        .transpose();
            }
        }

        // iteration-level curriculum decisions, shared by every peer
        const bool distilling = K >= 2 && !(cfg_.distill.no_tc && cfg_.distill.no_nc);
        rng_t phase_rng = make_rng(cfg_.seed, "phase", epoch_u(), step_in_epoch_);
        const distill::Phase phase = distill::phase_gate(
            t, cfg_.distill.tau0, cfg_.distill.tau1, uniform01(phase_rng));
        std::vector<distill::Mask> masks;
        if (distilling && !cfg_.distill.no_nc && !cfg_.distill.no_cnc) {
            rng_t mask_rng = make_rng(cfg_.seed, "mask", epoch_u(), step_in_epoch_);
            masks.reserve(static_cast<std::size_t>(B));
            for (int r = 0; r < B; ++r)
                masks.push_back(distill::curriculum_mask(
                    t, cfg_.distill.tau1, labels[static_cast<std::size_t>(r)],
                    bundle_->vocab.frequency, mask_rng));
        }

        // target decoupling and batch truncation
        std::vector<std::vector<distill::TargetSplit>> splits(
            static_cast<std::size_t>(K),
            std::vector<distill::TargetSplit>(static_cast<std::size_t>(B)));
        const double invT = 1.0 / cfg_.distill.temperature;
        std::vector<std::uint8_t> truncated(static_cast<std::size_t>(B), 0);
        if (distilling) {
            std::vector<std::vector<double>> target_probs(
                static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(B)));
            for (int k = 0; k < K; ++k)
                for (int r = 0; r < B; ++r) {
                    const Vec z =
                        invT * logits[static_cast<std::size_t>(k)].row(r).transpose();
                    splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                        distill::decouple_target(z, labels[static_cast<std::size_t>(r)]);
                    target_probs[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                        splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)]
                            .p_target;
                }
            truncated = distill::truncation_flags(target_probs, cfg_.distill.epsilon);
            for (int r = 0; r < B; ++r)
                if (truncated[static_cast<std::size_t>(r)])
                    for (int k = 0; k < K; ++k)
                        splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                            distill::TargetSplit{1.0, 0.0};
        }

        // per-sample joint loss and student gradients
        StepResult result;
        result.epoch = epoch_;
        result.step = global_step_;
        result.t = t;
        result.phase = phase;
        result.peers.assign(static_cast<std::size_t>(K), PeerTerms{});
        std::vector<Mat> dz(static_cast<std::size_t>(K), Mat::Zero(B, n_classes));
        const double inv_batch = 1.0 / static_cast<double>(B);

        for (int r = 0; r < B; ++r) {
            std::vector<Vec> row_logits;
            row_logits.reserve(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k)
                row_logits.push_back(logits[static_cast<std::size_t>(k)].row(r).transpose());
            std::vector<distill::TargetSplit> row_splits(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k)
                row_splits[static_cast<std::size_t>(k)] =
                    splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)];
            const distill::Mask& mask =
                masks.empty()
                    ? distill::conventional_mask(n_classes,
                                                 labels[static_cast<std::size_t>(r)])
                    : masks[static_cast<std::size_t>(r)];

            auto jb = distill::joint_loss(row_logits, labels[static_cast<std::size_t>(r)],
                                          row_splits, phase, mask, cfg_.distill, true);
            result.total += jb.total * inv_batch;
            for (int k = 0; k < K; ++k) {
                result.peers[static_cast<std::size_t>(k)].ce +=
                    jb.ce[static_cast<std::size_t>(k)] * inv_batch;
                result.peers[static_cast<std::size_t>(k)].tc +=
                    jb.tc[static_cast<std::size_t>(k)] * inv_batch;
                result.peers[static_cast<std::size_t>(k)].nc +=
                    jb.nc[static_cast<std::size_t>(k)] * inv_batch;
                dz[static_cast<std::size_t>(k)].row(r) =
                    inv_batch * jb.dz[static_cast<std::size_t>(k)].transpose();
            }
        }

        if (!std::isfinite(result.total)) abort_with_dump(window_idx, logits, result);

        // pass 2: replay the forward per row (same dropout streams) and
        // backprop the student gradients
        const double lr = current_lr();
        result.lr = lr;
        for (int k = 0; k < K; ++k) {
            auto& peer = *peers_[static_cast<std::size_t>(k)];
            peer.zero_grads();
            for (int r = 0; r < B; ++r) {
                rng_t drop = dropout_rng(r);
                peer.forward_one(batch, r, true, &drop);
                peer.backward_one(dz[static_cast<std::size_t>(k)].row(r).transpose());
            }
            clip_gradients(peer);
            adam_update(static_cast<std::size_t>(k), lr);
        }

        ++global_step_;
        ++step_in_epoch_;
        history_.push_back(result);
        write_log(result, truncated);
        return result;
    }

    // One full epoch: shuffle windows with the epoch stream, run every batch.
    void run_epoch() {
        std::vector<std::size_t> order(bundle_->train.size());
        std::iota(order.begin(), order.end(), 0);
        rng_t shuffle_rng = make_rng(cfg_.seed, "shuffle", epoch_u());
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        step_in_epoch_ = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg_.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
            training_step({order.begin() + static_cast<std::ptrdiff_t>(begin),
                           order.begin() + static_cast<std::ptrdiff_t>(end)});
        }
        ++epoch_;

        if (cfg_.evaluate_val && !bundle_->val.empty()) {
            EpochValidation v;
            v.epoch = epoch_;
            for (int k = 0; k < peer_count(); ++k) {
                auto m = metrics::evaluate(peer(k), bundle_->val);
                v.ndcg5.push_back(m.ndcg.at(5));
                v.mean_ndcg5 += m.ndcg.at(5) / peer_count();
            }
            val_history_.push_back(v);
            write_val_log(v);
            if (!cfg_.run_dir.empty() && v.mean_ndcg5 >= best_val_) {
                best_val_ = v.mean_ndcg5;
                save_checkpoint(cfg_.run_dir / "best");
            }
        }
        if (!cfg_.run_dir.empty() && (epoch_ % cfg_.checkpoint_every == 0 ||
                                      epoch_ == cfg_.total_epochs)) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d", epoch_);
            save_checkpoint(cfg_.run_dir / "checkpoints" / name);
        }
    }

    void run() {
        while (epoch_ < cfg_.total_epochs) run_epoch();
        if (!cfg_.run_dir.empty()) save_checkpoint(cfg_.run_dir / "final");
    }

    // ---------------------------------------------------------------------
    // Checkpointing
    // ---------------------------------------------------------------------

    void save_checkpoint(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        for (int k = 0; k < peer_count(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "peer%d.ckpt", k);
            enc::save_encoder(dir / name, *peers_[static_cast<std::size_t>(k)]);
        }
        enc::NamedArrays opt;
        opt.meta = {{"kind", "optimizer"},
                    {"epoch", epoch_},
                    {"global_step", global_step_},
                    {"seed", cfg_.seed},
                    {"best_val", best_val_}};
        for (std::size_t k = 0; k < peers_.size(); ++k) {
            std::size_t i = 0;
            peers_[k]->for_each_param([&](const std::string& pname, Mat&, Mat&) {
                const std::string prefix =
                    "peer" + std::to_string(k) + "/" + pname;
                opt.arrays.emplace_back(prefix + "/m", adam_m_[k][i]);
                opt.arrays.emplace_back(prefix + "/v", adam_v_[k][i]);
                ++i;
            });
        }
        enc::write_container(dir / "optimizer.bin", opt);
    }

    // Restores parameters, moments and counters saved by save_checkpoint.
    // Continuing from here replays the exact run an uninterrupted training
    // would have produced.
    void resume_from(const std::filesystem::path& dir) {
        for (int k = 0; k < peer_count(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "peer%d.ckpt", k);
            auto loaded = enc::load_encoder(dir / name);
            if (!(loaded->config() == peers_[static_cast<std::size_t>(k)]->config()))
                throw config_error("resume: encoder config mismatch for peer " +
                                   std::to_string(k));
            peers_[static_cast<std::size_t>(k)] = std::move(loaded);
        }
        const auto opt = enc::read_container(dir / "optimizer.bin");
        if (opt.meta.at("kind").get<std::string>() != "optimizer")
            throw data_error("resume: optimizer container missing");
        if (opt.meta.at("seed").get<std::uint64_t>() != cfg_.seed)
            throw config_error("resume: checkpoint was written under another seed");
        epoch_ = opt.meta.at("epoch").get<int>();
        global_step_ = opt.meta.at("global_step").get<long long>();
        best_val_ = opt.meta.at("best_val").get<double>();
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < peers_.size(); ++k) {
            std::size_t i = 0;
            peers_[k]->for_each_param([&](const std::string& pname, Mat& v, Mat&) {
                if (cursor + 2 > opt.arrays.size())
                    throw data_error("resume: optimizer container truncated");
                const auto& [mname, m] = opt.arrays.at(cursor++);
                const auto& [vname, vv] = opt.arrays.at(cursor++);
                const std::string prefix = "peer" + std::to_string(k) + "/" + pname;
                if (mname != prefix + "/m" || vname != prefix + "/v" ||
                    m.rows() != v.rows() || m.cols() != v.cols())
                    throw data_error("resume: optimizer state mismatch at " + pname);
                adam_m_[k][i] = m;
                adam_v_[k][i] = vv;
                ++i;
            });
        }
    }

private:
    std::uint64_t epoch_u() const { return static_cast<std::uint64_t>(epoch_); }

    rng_t dropout_rng(int row) const {
        // shared across peers: identical twins must consume identical noise
        return make_rng(cfg_.seed, "dropout", epoch_u(), step_in_epoch_,
                        static_cast<std::uint64_t>(row));
    }

    double current_lr() const {
        const double frac =
            1.0 - static_cast<double>(global_step_) / static_cast<double>(total_steps_);
        return cfg_.base_lr * std::max(0.0, frac);
    }

    void clip_gradients(enc::Encoder& peer) const {
        double sq = 0.0;
        peer.for_each_param(
            [&](const std::string&, Mat&, Mat& g) { sq += g.squaredNorm(); });
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) {
            const double scale = cfg_.grad_clip / norm;
            peer.for_each_param([&](const std::string&, Mat&, Mat& g) { g *= scale; });
        }
    }

    void adam_update(std::size_t k, double lr) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        const double t = static_cast<double>(global_step_ + 1);
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        std::size_t i = 0;
        peers_[k]->for_each_param([&](const std::string&, Mat& v, Mat& g) {
            Mat& m = adam_m_[k][i];
            Mat& vv = adam_v_[k][i];
            m = beta1 * m + (1.0 - beta1) * g;
            vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
            v.array() -= lr * (m.array() / bc1) / ((vv.array() / bc2).sqrt() + eps);
            ++i;
        });
    }

    void abort_with_dump(const std::vector<std::size_t>& window_idx,
                         const std::vector<Mat>& logits, const StepResult& result) {
        if (!cfg_.run_dir.empty()) {
            nlohmann::json dump{{"epoch", epoch_},
                                {"step", global_step_},
                                {"total", result.total},
                                {"windows", window_idx}};
            for (std::size_t k = 0; k < logits.size(); ++k) {
                dump["peer" + std::to_string(k)] = {
                    {"max_abs_logit", logits[k].cwiseAbs().maxCoeff()},
                    {"finite", logits[k].allFinite()}};
            }
            std::ofstream out(cfg_.run_dir / "diagnostic_batch.json");
            out << dump.dump(1, '\t') << '\n';
        }
        throw numeric_error("training_step: non-finite loss at epoch " +
                            std::to_string(epoch_) + " step " +
                            std::to_string(global_step_));
    }

    void write_log(const StepResult& r, const std::vector<std::uint8_t>& truncated) {
        if (!log_.is_open()) return;
        nlohmann::json peers = nlohmann::json::array();
        for (const auto& p : r.peers)
            peers.push_back({{"ce", p.ce}, {"tc", p.tc}, {"nc", p.nc}});
        std::size_t truncated_count = 0;
        for (auto f : truncated) truncated_count += f;
        nlohmann::json entry{{"epoch", r.epoch},
                             {"step", r.step},
                             {"t", r.t},
                             {"phase", r.phase == distill::Phase::simple ? "simple"
                                                                         : "difficult"},
                             {"peers", std::move(peers)},
                             {"lr", r.lr},
                             {"truncated", truncated_count}};
        log_ << entry.dump() << '\n';
        log_.flush();
    }

    void write_val_log(const EpochValidation& v) {
        if (!log_.is_open()) return;
        nlohmann::json entry{{"epoch", v.epoch},
                             {"validation", {{"ndcg5", v.ndcg5},
                                             {"mean_ndcg5", v.mean_ndcg5}}}};
        log_ << entry.dump() << '\n';
        log_.flush();
    }

    const data::DatasetBundle* bundle_;
    TrainerConfig cfg_;
    std::vector<std::unique_ptr<enc::Encoder>> peers_;
    std::vector<std::vector<Mat>> adam_m_, adam_v_;
    std::vector<StepResult> history_;
    std::vector<EpochValidation> val_history_;
    std::size_t steps_per_epoch_ = 0;
    long long total_steps_ = 0;
    long long global_step_ = 0;
    std::uint64_t step_in_epoch_ = 0;
    int epoch_ = 0;
    int model_len_ = 2;
    double best_val_ = -1.0;
    std::ofstream log_;
};

// Convenience wrapper: construct, run every epoch, return the trainer.
inline std::unique_ptr<Trainer> run_training(const data::DatasetBundle& bundle,
                                             const TrainerConfig& cfg) {
    auto trainer = std::make_unique<Trainer>(bundle, cfg);
    trainer->run();
    return trainer;
}

} // namespace crimealarm::train

#endif // CRIMEALARM_TRAINER_HPP
