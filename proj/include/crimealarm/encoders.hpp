#ifndef CRIMEALARM_ENCODERS_HPP
#define CRIMEALARM_ENCODERS_HPP

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crimealarm/common.hpp"

// Sequence encoders mapping a padded id sequence to a logit vector over the
// event vocabulary at the prediction position. Three interchangeable
// backbones (bidirectional attention, gated recurrence, causal dilated
// convolutions) share the embedding table and a weight-tied scoring head,
// and follow the same training contract: forward one sample with an explicit
// dropout stream, then backward the loss gradient into accumulated parameter
// gradients.
//
// Prediction protocol: a MASK token is appended after the history and the
// output is read at that position. The attention backbone treats it as a
// cloze query; the recurrent and convolutional backbones consume it as an
// end-of-history marker, so the state there is the last non-pad state.
// Right padding can never influence the readout: attention masks pad keys,
// the other two backbones are causal.

namespace crimealarm::enc {

struct EncoderConfig {
    std::string backbone = "transformer"; // transformer | gru | tcn
    int num_layers = 2;
    int num_heads = 2;
    int embed_dim = 64;
    int hidden_dim = 256; // FFN inner width / recurrent state / conv channels
    int max_len = 200;    // longest model input including the MASK slot
    int vocab_size = 0;   // real event classes; PAD and MASK are appended
    double dropout = 0.1;
    int kernel_size = 3; // tcn
    std::uint64_t init_seed = 0;

    int pad_id() const { return vocab_size; }
    int mask_id() const { return vocab_size + 1; }
    int table_size() const { return vocab_size + 2; }

    void validate() const {
        if (backbone != "transformer" && backbone != "gru" && backbone != "tcn")
            throw config_error("encoder: unknown backbone '" + backbone + "'");
        if (vocab_size < 2) throw config_error("encoder: vocab_size must be >= 2");
        if (num_layers < 1) throw config_error("encoder: num_layers must be >= 1");
        if (embed_dim < 1 || hidden_dim < 1)
            throw config_error("encoder: dimensions must be positive");
        if (max_len < 2) throw config_error("encoder: max_len must be >= 2");
        if (dropout < 0.0 || dropout >= 1.0)
            throw config_error("encoder: dropout must be in [0, 1)");
        if (backbone == "transformer") {
            if (num_heads < 1 || embed_dim % num_heads != 0)
                throw config_error("encoder: embed_dim must divide into num_heads");
        }
        if (backbone == "tcn" && kernel_size < 2)
            throw config_error("encoder: kernel_size must be >= 2");
    }

    bool operator==(const EncoderConfig&) const = default;
};

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
    return {{"backbone", c.backbone},     {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},   {"embed_dim", c.embed_dim},
            {"hidden_dim", c.hidden_dim}, {"max_len", c.max_len},
            {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
            {"kernel_size", c.kernel_size}, {"init_seed", c.init_seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.backbone = j.at("backbone").get<std::string>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct SequenceBatch {
    int batch = 0;
    int seq_len = 0;
    std::vector<int> ids;           // row-major [batch x seq_len]
    std::vector<std::uint8_t> keep; // non-pad marker, same layout
    std::vector<int> predict_pos;   // per-row MASK position

    int id(int b, int t) const {
        return ids[static_cast<std::size_t>(b) * seq_len + t];
    }
    bool kept(int b, int t) const {
        return keep[static_cast<std::size_t>(b) * seq_len + t] != 0;
    }
};

// Builds a batch from raw histories: keep the most recent model_len-1
// events, append MASK, right-pad with PAD.
inline SequenceBatch make_batch(const std::vector<std::vector<int>>& histories,
                                int pad_id, int mask_id, int model_len) {
    if (model_len < 2) throw config_error("make_batch: model_len must be >= 2");
    SequenceBatch b;
    b.batch = static_cast<int>(histories.size());
    b.seq_len = model_len;
    b.ids.assign(static_cast<std::size_t>(b.batch) * model_len, pad_id);
    b.keep.assign(static_cast<std::size_t>(b.batch) * model_len, 0);
    b.predict_pos.resize(static_cast<std::size_t>(b.batch));
    for (int r = 0; r < b.batch; ++r) {
        const auto& h = histories[static_cast<std::size_t>(r)];
        const int take = std::min<int>(static_cast<int>(h.size()), model_len - 1);
        const std::size_t base = static_cast<std::size_t>(r) * model_len;
        for (int t = 0; t < take; ++t) {
            b.ids[base + t] = h[h.size() - static_cast<std::size_t>(take - t)];
            b.keep[base + t] = 1;
        }
        b.ids[base + take] = mask_id;
        b.keep[base + take] = 1;
        b.predict_pos[static_cast<std::size_t>(r)] = take;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Parameter plumbing
// ---------------------------------------------------------------------------

namespace detail {

struct Param {
    std::string name;
    Mat value;
    Mat grad;
};

// A registered parameter: value and gradient of identical shape.
struct Slot {
    Mat* v = nullptr;
    Mat* g = nullptr;
};

class ParamList {
public:
    // Registration order is the serialization order; keep it deterministic.
    Slot add(const std::string& name, int rows, int cols) {
        params_.push_back(
            std::make_unique<Param>(Param{name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)}));
        return Slot{&params_.back()->value, &params_.back()->grad};
    }
    void visit(const std::function<void(const std::string&, Mat&, Mat&)>& fn) {
        for (auto& p : params_) fn(p->name, p->value, p->grad);
    }
    void zero_grads() {
        for (auto& p : params_) p->grad.setZero();
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

inline double uniform_sym(rng_t& rng, double limit) {
    return (2.0 * uniform01(rng) - 1.0) * limit;
}

inline void init_uniform(Mat& m, rng_t& rng, double limit) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = uniform_sym(rng, limit);
}

inline void init_xavier(Mat& m, rng_t& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    init_uniform(m, rng, limit);
}

// Inverted dropout mask; all-ones when not training.
inline Mat dropout_mask(int rows, int cols, double rate, bool training, rng_t* rng) {
    if (!training || rate <= 0.0 || rng == nullptr) return Mat::Ones(rows, cols);
    Mat mask(rows, cols);
    const double scale = 1.0 / (1.0 - rate);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            mask(r, c) = uniform01(*rng) < rate ? 0.0 : scale;
    return mask;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Mat xhat;
    Vec inv_sigma;
};

inline Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias,
                      LayerNormCache& cache) {
    const int rows = static_cast<int>(x.rows());
    const int cols = static_cast<int>(x.cols());
    cache.xhat.resize(rows, cols);
    cache.inv_sigma.resize(rows);
    Mat y(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_sigma(r) = inv;
        cache.xhat.row(r) = (x.row(r).array() - mu) * inv;
        y.row(r) = cache.xhat.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
    }
    return y;
}

inline Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache,
                               const Vec& gain, Mat& dgain, Mat& dbias) {
    const int rows = static_cast<int>(dy.rows());
    const int cols = static_cast<int>(dy.cols());
    Mat dx(rows, cols);
    for (int r = 0; r < rows; ++r) {
        dgain.col(0) += dy.row(r).cwiseProduct(cache.xhat.row(r)).transpose();
        dbias.col(0) += dy.row(r).transpose();
        const Eigen::RowVectorXd g = dy.row(r).cwiseProduct(gain.transpose());
        const double mean_g = g.mean();
        const double mean_gx = g.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) =
            (g.array() - mean_g - cache.xhat.row(r).array() * mean_gx) *
            cache.inv_sigma(r);
    }
    return dx;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Encoder interface
// ---------------------------------------------------------------------------

class Encoder {
public:
    virtual ~Encoder() = default;
    virtual const EncoderConfig& config() const = 0;

    // Logits [batch x vocab_size] in evaluation mode (no dropout). Pure.
    virtual Mat encode(const SequenceBatch& batch) const = 0;

    // Training path: forward one row caching activations, then backward the
    // loss gradient into the parameter gradients. Calls alternate per row.
    virtual Vec forward_one(const SequenceBatch& batch, int row, bool training,
                            rng_t* dropout_rng) = 0;
    virtual void backward_one(const Vec& dlogits) = 0;

    virtual void for_each_param(
        const std::function<void(const std::string&, Mat&, Mat&)>& fn) = 0;
    virtual void zero_grads() = 0;

    std::size_t parameter_count() {
        std::size_t n = 0;
        for_each_param([&](const std::string&, Mat& v, Mat&) {
            n += static_cast<std::size_t>(v.size());
        });
        return n;
    }
};

namespace detail {

inline void check_batch(const SequenceBatch& batch, const EncoderConfig& cfg) {
    for (int v : batch.ids)
        if (v < 0 || v >= cfg.table_size())
            throw data_error("encode: id out of range for the vocabulary");
    for (int r = 0; r < batch.batch; ++r) {
        const int pos = batch.predict_pos[static_cast<std::size_t>(r)];
        if (pos < 0 || pos >= batch.seq_len)
            throw data_error("encode: predict position out of range");
        if (batch.id(r, pos) != cfg.mask_id())
            throw data_error("encode: prediction slot must hold the MASK token");
        if (!batch.kept(r, pos))
            throw data_error("encode: prediction slot marked as padding");
    }
    if (batch.seq_len > cfg.max_len)
        throw data_error("encode: batch longer than the encoder max_len");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Bidirectional attention backbone (post-norm, learned positions, cloze
// readout)
// ---------------------------------------------------------------------------

class TransformerEncoder final : public Encoder {
public:
    explicit TransformerEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        rng_t rng(cfg_.init_seed);
        const int d = cfg_.embed_dim;
        const int hidden = cfg_.hidden_dim;
        const double embed_limit = 1.0 / std::sqrt(static_cast<double>(d));

        embed_ = params_.add("embedding", cfg_.table_size(), d);
        detail::init_uniform(*embed_.v, rng, embed_limit);
        pos_ = params_.add("positions", cfg_.max_len, d);
        detail::init_uniform(*pos_.v, rng, embed_limit);
        out_bias_ = params_.add("head.bias", cfg_.vocab_size, 1);

        layers_.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (int l = 0; l < cfg_.num_layers; ++l) {
            auto& L = layers_[static_cast<std::size_t>(l)];
            const std::string p = "layer" + std::to_string(l) + ".";
            L.wq = params_.add(p + "attn.wq", d, d);
            L.wk = params_.add(p + "attn.wk", d, d);
            L.wv = params_.add(p + "attn.wv", d, d);
            L.wo = params_.add(p + "attn.wo", d, d);
            L.bq = params_.add(p + "attn.bq", d, 1);
            L.bk = params_.add(p + "attn.bk", d, 1);
            L.bv = params_.add(p + "attn.bv", d, 1);
            L.bo = params_.add(p + "attn.bo", d, 1);
            L.ln1_g = params_.add(p + "ln1.gain", d, 1);
            L.ln1_b = params_.add(p + "ln1.bias", d, 1);
            L.w1 = params_.add(p + "ffn.w1", d, hidden);
            L.b1 = params_.add(p + "ffn.b1", hidden, 1);
            L.w2 = params_.add(p + "ffn.w2", hidden, d);
            L.b2 = params_.add(p + "ffn.b2", d, 1);
            L.ln2_g = params_.add(p + "ln2.gain", d, 1);
            L.ln2_b = params_.add(p + "ln2.bias", d, 1);
            for (detail::Slot* s : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2})
                detail::init_xavier(*s->v, rng);
            L.ln1_g.v->setOnes();
            L.ln2_g.v->setOnes();
        }
    }

    const EncoderConfig& config() const override { return cfg_; }

    Mat encode(const SequenceBatch& batch) const override {
        detail::check_batch(batch, cfg_);
        Mat logits(batch.batch, cfg_.vocab_size);
        Cache cache;
        for (int r = 0; r < batch.batch; ++r)
            logits.row(r) = run(batch, r, false, nullptr, cache).transpose();
        return logits;
    }

    Vec forward_one(const SequenceBatch& batch, int row, bool training,
                    rng_t* dropout_rng) override {
        detail::check_batch(batch, cfg_);
        return run(batch, row, training, dropout_rng, cache_);
    }

    void backward_one(const Vec& dlogits) override {
        const Cache& c = cache_;
        const int T = c.T;
        const int d = cfg_.embed_dim;
        const int H = cfg_.num_heads;
        const int dh = d / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        // tied head
        embed_.g->topRows(cfg_.vocab_size) += dlogits * c.readout.transpose();
        out_bias_.g->col(0) += dlogits;
        Vec dread = embed_.v->topRows(cfg_.vocab_size).transpose() * dlogits;

        Mat dx = Mat::Zero(T, d);
        dx.row(c.predict_pos) = dread.transpose();

        for (int l = cfg_.num_layers - 1; l >= 0; --l) {
            const auto& L = layers_[static_cast<std::size_t>(l)];
            const auto& lc = c.layers[static_cast<std::size_t>(l)];

            // FFN sublayer backward
            Mat dres = detail::layer_norm_backward(dx, lc.ln2, L.ln2_g.v->col(0),
                                                   *L.ln2_g.g, *L.ln2_b.g);
            Mat df2 = dres.cwiseProduct(lc.drop_ffn);
            Mat dgelu_out = df2 * L.w2.v->transpose();
            *L.w2.g += lc.gelu_out.transpose() * df2;
            L.b2.g->col(0) += df2.colwise().sum().transpose();
            Mat du = dgelu_out.cwiseProduct(lc.gelu_grad);
            *L.w1.g += lc.x1.transpose() * du;
            L.b1.g->col(0) += du.colwise().sum().transpose();
            Mat dx1 = dres + du * L.w1.v->transpose();

            // attention sublayer backward
            dres = detail::layer_norm_backward(dx1, lc.ln1, L.ln1_g.v->col(0),
                                               *L.ln1_g.g, *L.ln1_b.g);
            Mat dout = dres.cwiseProduct(lc.drop_attn);
            Mat dctx = dout * L.wo.v->transpose();
            *L.wo.g += lc.ctx.transpose() * dout;
            L.bo.g->col(0) += dout.colwise().sum().transpose();

            Mat dq = Mat::Zero(T, d), dk = Mat::Zero(T, d), dv = Mat::Zero(T, d);
            for (int h = 0; h < H; ++h) {
                const auto& A = lc.attn[static_cast<std::size_t>(h)];
                const auto& Adrop = lc.attn_drop[static_cast<std::size_t>(h)];
                const auto& Dmask = lc.attn_mask[static_cast<std::size_t>(h)];
                const auto Qh = lc.q.middleCols(h * dh, dh);
                const auto Kh = lc.k.middleCols(h * dh, dh);
                const auto Vh = lc.v.middleCols(h * dh, dh);
                const auto dCh = dctx.middleCols(h * dh, dh);

                Mat dAdrop = dCh * Vh.transpose();
                dv.middleCols(h * dh, dh) += Adrop.transpose() * dCh;
                Mat dA = dAdrop.cwiseProduct(Dmask);
                Mat dS(T, T);
                for (int r = 0; r < T; ++r) {
                    const double dot = dA.row(r).dot(A.row(r));
                    dS.row(r) = A.row(r).cwiseProduct(
                        (dA.row(r).array() - dot).matrix());
                }
                dq.middleCols(h * dh, dh) += scale * dS * Kh;
                dk.middleCols(h * dh, dh) += scale * dS.transpose() * Qh;
            }
            *L.wq.g += lc.x_in.transpose() * dq;
            L.bq.g->col(0) += dq.colwise().sum().transpose();
            *L.wk.g += lc.x_in.transpose() * dk;
            L.bk.g->col(0) += dk.colwise().sum().transpose();
            *L.wv.g += lc.x_in.transpose() * dv;
            L.bv.g->col(0) += dv.colwise().sum().transpose();
            dx = dres + dq * L.wq.v->transpose() + dk * L.wk.v->transpose() +
                 dv * L.wv.v->transpose();
        }

        dx = dx.cwiseProduct(c.drop_embed);
        for (int t = 0; t < T; ++t) {
            embed_.g->row(c.ids[static_cast<std::size_t>(t)]) += dx.row(t);
            pos_.g->row(t) += dx.row(t);
        }
    }

    void for_each_param(
        const std::function<void(const std::string&, Mat&, Mat&)>& fn) override {
        params_.visit(fn);
    }
    void zero_grads() override { params_.zero_grads(); }

private:
    struct Layer {
        detail::Slot wq, wk, wv, wo, bq, bk, bv, bo;
        detail::Slot ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
    };
    struct LayerCache {
        Mat x_in, q, k, v, ctx;
        std::vector<Mat> attn, attn_drop, attn_mask;
        Mat drop_attn;
        detail::LayerNormCache ln1;
        Mat x1, gelu_out, gelu_grad, drop_ffn;
        detail::LayerNormCache ln2;
    };
    struct Cache {
        int T = 0;
        int predict_pos = 0;
        std::vector<int> ids;
        Mat drop_embed;
        std::vector<LayerCache> layers;
        Vec readout;
    };

    Vec run(const SequenceBatch& batch, int row, bool training, rng_t* rng,
            Cache& cache) const {
        const int T = batch.seq_len;
        const int d = cfg_.embed_dim;
        const int H = cfg_.num_heads;
        const int dh = d / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        cache.T = T;
        cache.predict_pos = batch.predict_pos[static_cast<std::size_t>(row)];
        cache.ids.resize(static_cast<std::size_t>(T));

        Mat x(T, d);
        for (int t = 0; t < T; ++t) {
            const int id = batch.id(row, t);
            cache.ids[static_cast<std::size_t>(t)] = id;
            x.row(t) = embed_.v->row(id) + pos_.v->row(t);
        }
        cache.drop_embed = detail::dropout_mask(T, d, cfg_.dropout, training, rng);
        x = x.cwiseProduct(cache.drop_embed);

        Vec key_mask(T);
        for (int t = 0; t < T; ++t)
            key_mask(t) = batch.kept(row, t) ? 0.0 : -1e9;

        cache.layers.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const auto& L = layers_[static_cast<std::size_t>(l)];
            auto& lc = cache.layers[static_cast<std::size_t>(l)];
            lc.x_in = x;
            lc.q = x * *L.wq.v;
            lc.q.rowwise() += L.bq.v->col(0).transpose();
            lc.k = x * *L.wk.v;
            lc.k.rowwise() += L.bk.v->col(0).transpose();
            lc.v = x * *L.wv.v;
            lc.v.rowwise() += L.bv.v->col(0).transpose();

            lc.attn.assign(static_cast<std::size_t>(H), Mat());
            lc.attn_drop.assign(static_cast<std::size_t>(H), Mat());
            lc.attn_mask.assign(static_cast<std::size_t>(H), Mat());
            lc.ctx.resize(T, d);
            for (int h = 0; h < H; ++h) {
                const auto Qh = lc.q.middleCols(h * dh, dh);
                const auto Kh = lc.k.middleCols(h * dh, dh);
                const auto Vh = lc.v.middleCols(h * dh, dh);
                Mat scores = scale * (Qh * Kh.transpose());
                scores.rowwise() += key_mask.transpose();
                Mat A(T, T);
                for (int r = 0; r < T; ++r) {
                    const double m = scores.row(r).maxCoeff();
                    A.row(r) = (scores.row(r).array() - m).exp();
                    A.row(r) /= A.row(r).sum();
                }
                Mat Dmask = detail::dropout_mask(T, T, cfg_.dropout, training, rng);
                Mat Adrop = A.cwiseProduct(Dmask);
                lc.ctx.middleCols(h * dh, dh) = Adrop * Vh;
                lc.attn[static_cast<std::size_t>(h)] = std::move(A);
                lc.attn_drop[static_cast<std::size_t>(h)] = std::move(Adrop);
                lc.attn_mask[static_cast<std::size_t>(h)] = std::move(Dmask);
            }
            Mat o = lc.ctx * *L.wo.v;
            o.rowwise() += L.bo.v->col(0).transpose();
            lc.drop_attn = detail::dropout_mask(T, d, cfg_.dropout, training, rng);
            o = o.cwiseProduct(lc.drop_attn);
            Mat x1 =
                detail::layer_norm(x + o, L.ln1_g.v->col(0), L.ln1_b.v->col(0), lc.ln1);
            lc.x1 = x1;

            Mat u = x1 * *L.w1.v;
            u.rowwise() += L.b1.v->col(0).transpose();
            lc.gelu_out.resize(T, cfg_.hidden_dim);
            lc.gelu_grad.resize(T, cfg_.hidden_dim);
            for (int r = 0; r < T; ++r)
                for (int c2 = 0; c2 < cfg_.hidden_dim; ++c2) {
                    lc.gelu_out(r, c2) = detail::gelu(u(r, c2));
                    lc.gelu_grad(r, c2) = detail::gelu_grad(u(r, c2));
                }
            Mat f = lc.gelu_out * *L.w2.v;
            f.rowwise() += L.b2.v->col(0).transpose();
            lc.drop_ffn = detail::dropout_mask(T, d, cfg_.dropout, training, rng);
            f = f.cwiseProduct(lc.drop_ffn);
            x = detail::layer_norm(x1 + f, L.ln2_g.v->col(0), L.ln2_b.v->col(0),
                                   lc.ln2);
        }

        cache.readout = x.row(cache.predict_pos).transpose();
        return embed_.v->topRows(cfg_.vocab_size) * cache.readout + out_bias_.v->col(0);
    }

    EncoderConfig cfg_;
    detail::ParamList params_;
    detail::Slot embed_, pos_, out_bias_;
    std::vector<Layer> layers_;
    Cache cache_;
};

// ---------------------------------------------------------------------------
// Gated recurrent backbone
// ---------------------------------------------------------------------------

class GruEncoder final : public Encoder {
public:
    explicit GruEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        rng_t rng(cfg_.init_seed);
        const int d = cfg_.embed_dim;
        const int h = cfg_.hidden_dim;
        const double embed_limit = 1.0 / std::sqrt(static_cast<double>(d));

        embed_ = params_.add("embedding", cfg_.table_size(), d);
        detail::init_uniform(*embed_.v, rng, embed_limit);
        out_bias_ = params_.add("head.bias", cfg_.vocab_size, 1);

        layers_.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (int l = 0; l < cfg_.num_layers; ++l) {
            auto& L = layers_[static_cast<std::size_t>(l)];
            const int in = l == 0 ? d : h;
            const std::string p = "layer" + std::to_string(l) + ".";
            L.wr = params_.add(p + "wr", in, h);
            L.wz = params_.add(p + "wz", in, h);
            L.wn = params_.add(p + "wn", in, h);
            L.ur = params_.add(p + "ur", h, h);
            L.uz = params_.add(p + "uz", h, h);
            L.un = params_.add(p + "un", h, h);
            L.br = params_.add(p + "br", h, 1);
            L.bz = params_.add(p + "bz", h, 1);
            L.bn = params_.add(p + "bn", h, 1);
            for (detail::Slot* s : {&L.wr, &L.wz, &L.wn, &L.ur, &L.uz, &L.un})
                detail::init_xavier(*s->v, rng);
        }
        proj_w_ = params_.add("proj.w", h, d);
        detail::init_xavier(*proj_w_.v, rng);
        proj_b_ = params_.add("proj.b", d, 1);
    }

    const EncoderConfig& config() const override { return cfg_; }

    Mat encode(const SequenceBatch& batch) const override {
        detail::check_batch(batch, cfg_);
        Mat logits(batch.batch, cfg_.vocab_size);
        Cache cache;
        for (int r = 0; r < batch.batch; ++r)
            logits.row(r) = run(batch, r, false, nullptr, cache).transpose();
        return logits;
    }

    Vec forward_one(const SequenceBatch& batch, int row, bool training,
                    rng_t* dropout_rng) override {
        detail::check_batch(batch, cfg_);
        return run(batch, row, training, dropout_rng, cache_);
    }

    void backward_one(const Vec& dlogits) override {
        const Cache& c = cache_;
        const int steps = c.steps;
        const int h = cfg_.hidden_dim;

        embed_.g->topRows(cfg_.vocab_size) += dlogits * c.readout_embed.transpose();
        out_bias_.g->col(0) += dlogits;
        Vec dread = embed_.v->topRows(cfg_.vocab_size).transpose() * dlogits;

        // projection
        const Vec& h_last = c.layers.back().h[static_cast<std::size_t>(steps - 1)];
        *proj_w_.g += h_last * dread.transpose();
        proj_b_.g->col(0) += dread;
        Vec dh_top = *proj_w_.v * dread;

        // per-layer incoming gradients on the layer's output sequence
        std::vector<Mat> dseq(static_cast<std::size_t>(cfg_.num_layers));
        for (int l = 0; l < cfg_.num_layers; ++l)
            dseq[static_cast<std::size_t>(l)] = Mat::Zero(steps, h);
        dseq[static_cast<std::size_t>(cfg_.num_layers - 1)].row(steps - 1) =
            dh_top.transpose();

        Mat dinput; // gradient flowing into the embedding sequence
        for (int l = cfg_.num_layers - 1; l >= 0; --l) {
            const auto& L = layers_[static_cast<std::size_t>(l)];
            const auto& lc = c.layers[static_cast<std::size_t>(l)];
            const int in_dim = l == 0 ? cfg_.embed_dim : h;
            Mat dx_seq = Mat::Zero(steps, in_dim);

            Vec dh_next = Vec::Zero(h);
            for (int t = steps - 1; t >= 0; --t) {
                Vec dh = dh_next +
                         dseq[static_cast<std::size_t>(l)].row(t).transpose();
                const Vec& r = lc.r[static_cast<std::size_t>(t)];
                const Vec& z = lc.z[static_cast<std::size_t>(t)];
                const Vec& n = lc.n[static_cast<std::size_t>(t)];
                const Vec& u = lc.u[static_cast<std::size_t>(t)];
                const Vec& h_prev = lc.h_prev[static_cast<std::size_t>(t)];
                const Vec& x_t = lc.x[static_cast<std::size_t>(t)];

                Vec dz = dh.cwiseProduct(h_prev - n);
                Vec dn = dh.cwiseProduct(Vec::Ones(h) - z);
                Vec dh_prev = dh.cwiseProduct(z);

                Vec dan = dn.cwiseProduct(Vec::Ones(h) - n.cwiseProduct(n));
                *L.wn.g += x_t * dan.transpose();
                L.bn.g->col(0) += dan;
                Vec dr = dan.cwiseProduct(u);
                Vec du = dan.cwiseProduct(r);
                *L.un.g += h_prev * du.transpose();
                dh_prev += *L.un.v * du;
                dx_seq.row(t) += (*L.wn.v * dan).transpose();

                Vec dar = dr.cwiseProduct(r.cwiseProduct(Vec::Ones(h) - r));
                *L.wr.g += x_t * dar.transpose();
                *L.ur.g += h_prev * dar.transpose();
                L.br.g->col(0) += dar;
                dx_seq.row(t) += (*L.wr.v * dar).transpose();
                dh_prev += *L.ur.v * dar;

                Vec daz = dz.cwiseProduct(z.cwiseProduct(Vec::Ones(h) - z));
                *L.wz.g += x_t * daz.transpose();
                *L.uz.g += h_prev * daz.transpose();
                L.bz.g->col(0) += daz;
                dx_seq.row(t) += (*L.wz.v * daz).transpose();
                dh_prev += *L.uz.v * daz;

                dh_next = dh_prev;
            }

            dx_seq = dx_seq.cwiseProduct(lc.drop_in);
            if (l == 0) {
                dinput = std::move(dx_seq);
            } else {
                dseq[static_cast<std::size_t>(l - 1)] += dx_seq;
            }
        }

        for (int t = 0; t < steps; ++t)
            embed_.g->row(c.ids[static_cast<std::size_t>(t)]) += dinput.row(t);
    }

    void for_each_param(
        const std::function<void(const std::string&, Mat&, Mat&)>& fn) override {
        params_.visit(fn);
    }
    void zero_grads() override { params_.zero_grads(); }

private:
    struct Layer {
        detail::Slot wr, wz, wn, ur, uz, un, br, bz, bn;
    };
    struct LayerCache {
        std::vector<Vec> x, h_prev, r, z, n, u, h;
        Mat drop_in; // dropout applied to this layer's input sequence
    };
    struct Cache {
        int steps = 0;
        std::vector<int> ids;
        std::vector<LayerCache> layers;
        Vec readout_embed;
    };

    Vec run(const SequenceBatch& batch, int row, bool training, rng_t* rng,
            Cache& cache) const {
        const int steps = batch.predict_pos[static_cast<std::size_t>(row)] + 1;
        const int d = cfg_.embed_dim;
        const int h = cfg_.hidden_dim;

        cache.steps = steps;
        cache.ids.resize(static_cast<std::size_t>(steps));
        cache.layers.assign(static_cast<std::size_t>(cfg_.num_layers), LayerCache{});

        Mat seq(steps, d);
        for (int t = 0; t < steps; ++t) {
            const int id = batch.id(row, t);
            cache.ids[static_cast<std::size_t>(t)] = id;
            seq.row(t) = embed_.v->row(id);
        }

        for (int l = 0; l < cfg_.num_layers; ++l) {
            const auto& L = layers_[static_cast<std::size_t>(l)];
            auto& lc = cache.layers[static_cast<std::size_t>(l)];
            const int in_dim = static_cast<int>(seq.cols());
            lc.drop_in = detail::dropout_mask(steps, in_dim, cfg_.dropout, training, rng);
            Mat input = seq.cwiseProduct(lc.drop_in);

            lc.x.resize(static_cast<std::size_t>(steps));
            lc.h_prev.resize(static_cast<std::size_t>(steps));
            lc.r.resize(static_cast<std::size_t>(steps));
            lc.z.resize(static_cast<std::size_t>(steps));
            lc.n.resize(static_cast<std::size_t>(steps));
            lc.u.resize(static_cast<std::size_t>(steps));
            lc.h.resize(static_cast<std::size_t>(steps));

            Vec state = Vec::Zero(h);
            Mat out(steps, h);
            for (int t = 0; t < steps; ++t) {
                const Vec x_t = input.row(t).transpose();
                const Vec ar = L.wr.v->transpose() * x_t + L.ur.v->transpose() * state +
                               L.br.v->col(0);
                const Vec az = L.wz.v->transpose() * x_t + L.uz.v->transpose() * state +
                               L.bz.v->col(0);
                const Vec r = ar.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
                const Vec z = az.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
                const Vec u = L.un.v->transpose() * state;
                const Vec an = L.wn.v->transpose() * x_t + r.cwiseProduct(u) +
                               L.bn.v->col(0);
                const Vec n = an.unaryExpr([](double v) { return std::tanh(v); });
                const Vec next = (Vec::Ones(h) - z).cwiseProduct(n) + z.cwiseProduct(state);

                lc.x[static_cast<std::size_t>(t)] = x_t;
                lc.h_prev[static_cast<std::size_t>(t)] = state;
                lc.r[static_cast<std::size_t>(t)] = r;
                lc.z[static_cast<std::size_t>(t)] = z;
                lc.n[static_cast<std::size_t>(t)] = n;
                lc.u[static_cast<std::size_t>(t)] = u;
                lc.h[static_cast<std::size_t>(t)] = next;
                out.row(t) = next.transpose();
                state = next;
            }
            seq = std::move(out);
        }

        const Vec h_last = seq.row(steps - 1).transpose();
        cache.readout_embed = proj_w_.v->transpose() * h_last + proj_b_.v->col(0);
        return embed_.v->topRows(cfg_.vocab_size) * cache.readout_embed +
               out_bias_.v->col(0);
    }

    EncoderConfig cfg_;
    detail::ParamList params_;
    detail::Slot embed_, out_bias_, proj_w_, proj_b_;
    std::vector<Layer> layers_;
    Cache cache_;
};

// ---------------------------------------------------------------------------
// Temporal convolutional backbone (causal, dilated, residual blocks)
// ---------------------------------------------------------------------------

class TcnEncoder final : public Encoder {
public:
    explicit TcnEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        rng_t rng(cfg_.init_seed);
        const int d = cfg_.embed_dim;
        const int ch = cfg_.hidden_dim;
        const double embed_limit = 1.0 / std::sqrt(static_cast<double>(d));

        embed_ = params_.add("embedding", cfg_.table_size(), d);
        detail::init_uniform(*embed_.v, rng, embed_limit);
        out_bias_ = params_.add("head.bias", cfg_.vocab_size, 1);

        blocks_.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (int l = 0; l < cfg_.num_layers; ++l) {
            auto& B = blocks_[static_cast<std::size_t>(l)];
            const int in = l == 0 ? d : ch;
            const std::string p = "block" + std::to_string(l) + ".";
            B.taps1.resize(static_cast<std::size_t>(cfg_.kernel_size));
            B.taps2.resize(static_cast<std::size_t>(cfg_.kernel_size));
            for (int tap = 0; tap < cfg_.kernel_size; ++tap) {
                B.taps1[static_cast<std::size_t>(tap)] =
                    params_.add(p + "conv1.t" + std::to_string(tap), in, ch);
                B.taps2[static_cast<std::size_t>(tap)] =
                    params_.add(p + "conv2.t" + std::to_string(tap), ch, ch);
            }
            B.b1 = params_.add(p + "conv1.bias", ch, 1);
            B.b2 = params_.add(p + "conv2.bias", ch, 1);
            B.has_proj = in != ch;
            if (B.has_proj) {
                B.proj = params_.add(p + "residual.proj", in, ch);
                detail::init_xavier(*B.proj.v, rng);
            }
            const double limit1 =
                std::sqrt(6.0 / static_cast<double>(in * cfg_.kernel_size + ch));
            const double limit2 =
                std::sqrt(6.0 / static_cast<double>(ch * cfg_.kernel_size + ch));
            for (auto& s : B.taps1) detail::init_uniform(*s.v, rng, limit1);
            for (auto& s : B.taps2) detail::init_uniform(*s.v, rng, limit2);
        }
        proj_w_ = params_.add("proj.w", ch, d);
        detail::init_xavier(*proj_w_.v, rng);
        proj_b_ = params_.add("proj.b", d, 1);
    }

    const EncoderConfig& config() const override { return cfg_; }

    // Positions a dilated stack can see from the readout slot.
    int receptive_field() const {
        int rf = 1;
        for (int l = 0; l < cfg_.num_layers; ++l)
            rf += 2 * (cfg_.kernel_size - 1) * (1 << l);
        return rf;
    }

    Mat encode(const SequenceBatch& batch) const override {
        detail::check_batch(batch, cfg_);
        Mat logits(batch.batch, cfg_.vocab_size);
        Cache cache;
        for (int r = 0; r < batch.batch; ++r)
            logits.row(r) = run(batch, r, false, nullptr, cache).transpose();
        return logits;
    }

    Vec forward_one(const SequenceBatch& batch, int row, bool training,
                    rng_t* dropout_rng) override {
        detail::check_batch(batch, cfg_);
        return run(batch, row, training, dropout_rng, cache_);
    }

    void backward_one(const Vec& dlogits) override {
        const Cache& c = cache_;
        const int steps = c.steps;

        embed_.g->topRows(cfg_.vocab_size) += dlogits * c.readout_embed.transpose();
        out_bias_.g->col(0) += dlogits;
        Vec dread = embed_.v->topRows(cfg_.vocab_size).transpose() * dlogits;

        const auto& top = c.blocks.back().out;
        *proj_w_.g += top.row(steps - 1).transpose() * dread.transpose();
        proj_b_.g->col(0) += dread;

        Mat dseq = Mat::Zero(steps, cfg_.hidden_dim);
        dseq.row(steps - 1) = (*proj_w_.v * dread).transpose();

        for (int l = cfg_.num_layers - 1; l >= 0; --l) {
            const auto& B = blocks_[static_cast<std::size_t>(l)];
            const auto& bc = c.blocks[static_cast<std::size_t>(l)];
            const int dil = 1 << l;

            // final relu on (conv path + residual)
            Mat dsum = dseq.cwiseProduct(bc.out_mask);
            Mat dy2 = dsum;

            // second conv back through dropout + relu
            Mat du2 = dy2.cwiseProduct(bc.drop2).cwiseProduct(bc.relu2_mask);
            Mat dy1 = conv_backward(du2, bc.y1, B.taps2, B.b2, dil);
            Mat du1 = dy1.cwiseProduct(bc.drop1).cwiseProduct(bc.relu1_mask);
            Mat dx = conv_backward(du1, bc.x_in, B.taps1, B.b1, dil);

            // residual path
            if (B.has_proj) {
                *B.proj.g += bc.x_in.transpose() * dsum;
                dx += dsum * B.proj.v->transpose();
            } else {
                dx += dsum;
            }

            if (l == 0) {
                dx = dx.cwiseProduct(c.drop_embed);
                for (int t = 0; t < steps; ++t)
                    embed_.g->row(c.ids[static_cast<std::size_t>(t)]) += dx.row(t);
            } else {
                dseq = std::move(dx);
            }
        }
    }

    void for_each_param(
        const std::function<void(const std::string&, Mat&, Mat&)>& fn) override {
        params_.visit(fn);
    }
    void zero_grads() override { params_.zero_grads(); }

private:
    struct Block {
        std::vector<detail::Slot> taps1, taps2;
        detail::Slot b1, b2, proj;
        bool has_proj = false;
    };
    struct BlockCache {
        Mat x_in, y1, out;
        Mat relu1_mask, relu2_mask, out_mask;
        Mat drop1, drop2;
    };
    struct Cache {
        int steps = 0;
        std::vector<int> ids;
        Mat drop_embed;
        std::vector<BlockCache> blocks;
        Vec readout_embed;
    };

    // out[t] = bias + sum_tap x[t - (k-1-tap)*dil] * W[tap]
    static Mat conv_forward(const Mat& x, const std::vector<detail::Slot>& taps,
                            const detail::Slot& bias, int dil) {
        const int T = static_cast<int>(x.rows());
        const int out_dim = static_cast<int>(taps.front().v->cols());
        const int k = static_cast<int>(taps.size());
        Mat out = Mat::Zero(T, out_dim);
        out.rowwise() += bias.v->col(0).transpose();
        for (int tap = 0; tap < k; ++tap) {
            const int off = (k - 1 - tap) * dil;
            if (off >= T) continue;
            out.bottomRows(T - off) += x.topRows(T - off) * *taps[static_cast<std::size_t>(tap)].v;
        }
        return out;
    }

    // Accumulates tap/bias grads and returns the input gradient.
    static Mat conv_backward(const Mat& dout, const Mat& x,
                             const std::vector<detail::Slot>& taps,
                             const detail::Slot& bias, int dil) {
        const int T = static_cast<int>(x.rows());
        const int k = static_cast<int>(taps.size());
        Mat dx = Mat::Zero(x.rows(), x.cols());
        bias.g->col(0) += dout.colwise().sum().transpose();
        for (int tap = 0; tap < k; ++tap) {
            const int off = (k - 1 - tap) * dil;
            if (off >= T) continue;
            *taps[static_cast<std::size_t>(tap)].g +=
                x.topRows(T - off).transpose() * dout.bottomRows(T - off);
            dx.topRows(T - off) +=
                dout.bottomRows(T - off) * taps[static_cast<std::size_t>(tap)].v->transpose();
        }
        return dx;
    }

    Vec run(const SequenceBatch& batch, int row, bool training, rng_t* rng,
            Cache& cache) const {
        const int steps = batch.predict_pos[static_cast<std::size_t>(row)] + 1;
        const int d = cfg_.embed_dim;
        const int ch = cfg_.hidden_dim;

        cache.steps = steps;
        cache.ids.resize(static_cast<std::size_t>(steps));
        cache.blocks.assign(static_cast<std::size_t>(cfg_.num_layers), BlockCache{});

        Mat seq(steps, d);
        for (int t = 0; t < steps; ++t) {
            const int id = batch.id(row, t);
            cache.ids[static_cast<std::size_t>(t)] = id;
            seq.row(t) = embed_.v->row(id);
        }
        cache.drop_embed = detail::dropout_mask(steps, d, cfg_.dropout, training, rng);
        seq = seq.cwiseProduct(cache.drop_embed);

        for (int l = 0; l < cfg_.num_layers; ++l) {
            const auto& B = blocks_[static_cast<std::size_t>(l)];
            auto& bc = cache.blocks[static_cast<std::size_t>(l)];
            const int dil = 1 << l;
            bc.x_in = seq;

            Mat u1 = conv_forward(seq, B.taps1, B.b1, dil);
            bc.relu1_mask = (u1.array() > 0.0).cast<double>();
            Mat a1 = u1.cwiseProduct(bc.relu1_mask);
            bc.drop1 = detail::dropout_mask(steps, ch, cfg_.dropout, training, rng);
            bc.y1 = a1.cwiseProduct(bc.drop1);

            Mat u2 = conv_forward(bc.y1, B.taps2, B.b2, dil);
            bc.relu2_mask = (u2.array() > 0.0).cast<double>();
            Mat a2 = u2.cwiseProduct(bc.relu2_mask);
            bc.drop2 = detail::dropout_mask(steps, ch, cfg_.dropout, training, rng);
            Mat y2 = a2.cwiseProduct(bc.drop2);

            Mat residual = B.has_proj ? Mat(seq * *B.proj.v) : seq;
            Mat sum = y2 + residual;
            bc.out_mask = (sum.array() > 0.0).cast<double>();
            bc.out = sum.cwiseProduct(bc.out_mask);
            seq = bc.out;
        }

        const Vec state = seq.row(steps - 1).transpose();
        cache.readout_embed = proj_w_.v->transpose() * state + proj_b_.v->col(0);
        return embed_.v->topRows(cfg_.vocab_size) * cache.readout_embed +
               out_bias_.v->col(0);
    }

    EncoderConfig cfg_;
    detail::ParamList params_;
    detail::Slot embed_, out_bias_, proj_w_, proj_b_;
    std::vector<Block> blocks_;
    Cache cache_;
};

inline std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    if (cfg.backbone == "transformer") return std::make_unique<TransformerEncoder>(cfg);
    if (cfg.backbone == "gru") return std::make_unique<GruEncoder>(cfg);
    return std::make_unique<TcnEncoder>(cfg);
}

// ---------------------------------------------------------------------------
// Checkpoint containers: JSON header plus raw little-endian doubles, with
// shape validation on load.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kContainerMagic = 0x3141'4143u; // "CAA1"

struct NamedArrays {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Mat>> arrays;
};

inline void write_container(const std::filesystem::path& path, const NamedArrays& c) {
    nlohmann::json header{{"meta", c.meta}};
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, m] : c.arrays)
        manifest.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    header["arrays"] = std::move(manifest);
    const std::string header_bytes = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    const std::uint32_t magic = kContainerMagic;
    const std::uint64_t len = header_bytes.size();
    out.write(reinterpret_cast<const char*>(&magic), sizeof magic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header_bytes.data(), static_cast<std::streamsize>(len));
    for (const auto& [name, m] : c.arrays)
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) *
                                               static_cast<std::size_t>(m.size())));
    if (!out) throw data_error("failed writing " + path.string());
}

inline NamedArrays read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read " + path.string());
    std::uint32_t magic = 0;
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || magic != kContainerMagic)
        throw data_error("not a parameter container: " + path.string());
    std::string header_bytes(len, '\0');
    in.read(header_bytes.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt container header: " + std::string(e.what()));
    }
    NamedArrays c;
    c.meta = header.at("meta");
    for (const auto& a : header.at("arrays")) {
        Mat m(a.at("rows").get<Eigen::Index>(), a.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) *
                                             static_cast<std::size_t>(m.size())));
        c.arrays.emplace_back(a.at("name").get<std::string>(), std::move(m));
    }
    if (!in) throw data_error("truncated container: " + path.string());
    return c;
}

inline void save_encoder(const std::filesystem::path& path, Encoder& encoder) {
    NamedArrays c;
    c.meta = {{"kind", "encoder"},
              {"format_version", 1},
              {"config", encoder_config_to_json(encoder.config())}};
    encoder.for_each_param([&](const std::string& name, Mat& v, Mat&) {
        c.arrays.emplace_back(name, v);
    });
    write_container(path, c);
}

inline std::unique_ptr<Encoder> load_encoder(const std::filesystem::path& path) {
    NamedArrays c = read_container(path);
    if (c.meta.at("kind").get<std::string>() != "encoder")
        throw data_error("container is not an encoder checkpoint: " + path.string());
    auto encoder = make_encoder(encoder_config_from_json(c.meta.at("config")));
    std::size_t i = 0;
    encoder->for_each_param([&](const std::string& name, Mat& v, Mat&) {
        if (i >= c.arrays.size())
            throw data_error("checkpoint missing parameter " + name);
        const auto& [stored_name, stored] = c.arrays[i];
        if (stored_name != name || stored.rows() != v.rows() ||
            stored.cols() != v.cols())
            throw data_error("checkpoint shape mismatch at " + name);
        v = stored;
        ++i;
    });
    if (i != c.arrays.size())
        throw data_error("checkpoint holds extra parameters: " + path.string());
    return encoder;
}

} // namespace crimealarm::enc

#endif // CRIMEALARM_ENCODERS_HPP
