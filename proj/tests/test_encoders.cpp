#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "crimealarm/distill.hpp"
#include "crimealarm/encoders.hpp"

using namespace crimealarm;
using namespace crimealarm::enc;

namespace {

EncoderConfig tiny_config(const std::string& backbone, int vocab = 12) {
    EncoderConfig cfg;
    cfg.backbone = backbone;
    cfg.num_layers = backbone == "tcn" ? 2 : 1;
    cfg.num_heads = 2;
    cfg.embed_dim = 8;
    cfg.hidden_dim = backbone == "transformer" ? 16 : 10;
    cfg.max_len = 12;
    cfg.vocab_size = vocab;
    cfg.dropout = 0.0;
    cfg.init_seed = 77;
    return cfg;
}

SequenceBatch demo_batch(const EncoderConfig& cfg, int rows = 3, int hist_len = 6) {
    std::vector<std::vector<int>> histories;
    rng_t rng(make_rng(5, "batch"));
    for (int r = 0; r < rows; ++r) {
        std::vector<int> h;
        const int len = 1 + static_cast<int>(rng() % hist_len);
        for (int i = 0; i < len; ++i)
            h.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.vocab_size)));
        histories.push_back(std::move(h));
    }
    return make_batch(histories, cfg.pad_id(), cfg.mask_id(), cfg.max_len);
}

const char* kBackbones[] = {"transformer", "gru", "tcn"};

} // namespace

TEST_CASE("make_batch layout") {
    EncoderConfig cfg = tiny_config("transformer");
    auto batch = make_batch({{1, 2, 3}, {4}}, cfg.pad_id(), cfg.mask_id(), 6);
    CHECK(batch.batch == 2);
    CHECK(batch.seq_len == 6);
    CHECK(batch.id(0, 0) == 1);
    CHECK(batch.id(0, 3) == cfg.mask_id());
    CHECK(batch.predict_pos[0] == 3);
    CHECK(batch.id(0, 4) == cfg.pad_id());
    CHECK_FALSE(batch.kept(0, 4));
    CHECK(batch.kept(0, 3));
    // long histories keep the most recent events
    auto clipped = make_batch({{1, 2, 3, 4, 5, 6, 7, 8}}, cfg.pad_id(), cfg.mask_id(), 4);
    CHECK(clipped.id(0, 0) == 6);
    CHECK(clipped.id(0, 2) == 8);
    CHECK(clipped.predict_pos[0] == 3);
}

TEST_CASE("config validation") {
    EncoderConfig cfg = tiny_config("transformer");
    CHECK_NOTHROW(cfg.validate());
    cfg.embed_dim = 63;
    cfg.num_heads = 2;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = tiny_config("nope");
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = tiny_config("transformer");
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    // paper-scale dimensions pass
    EncoderConfig full;
    full.vocab_size = 440;
    CHECK_NOTHROW(full.validate());
}

TEST_CASE("initialization is deterministic in the seed") {
    for (const char* backbone : kBackbones) {
        auto a = make_encoder(tiny_config(backbone));
        auto b = make_encoder(tiny_config(backbone));
        std::vector<Mat> va, vb;
        a->for_each_param([&](const std::string&, Mat& v, Mat&) { va.push_back(v); });
        b->for_each_param([&](const std::string&, Mat& v, Mat&) { vb.push_back(v); });
        REQUIRE(va.size() == vb.size());
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);

        auto cfg2 = tiny_config(backbone);
        cfg2.init_seed = 78;
        auto c = make_encoder(cfg2);
        bool any_diff = false;
        std::size_t i = 0;
        c->for_each_param([&](const std::string&, Mat& v, Mat&) {
            if (v.size() > 0 && va[i].size() == v.size() && va[i] != v) any_diff = true;
            ++i;
        });
        CHECK(any_diff);
    }
}

TEST_CASE("encode contract: shape, determinism, padding invariance") {
    for (const char* backbone : kBackbones) {
        DYNAMIC_SECTION("backbone " << backbone) {
            EncoderConfig cfg = tiny_config(backbone, 50);
            cfg.max_len = 16;
            auto enc = make_encoder(cfg);
            auto batch = demo_batch(cfg, 4, 9);

            Mat logits = enc->encode(batch);
            CHECK(logits.rows() == 4);
            CHECK(logits.cols() == 50);
            CHECK(logits.allFinite());

            Mat again = enc->encode(batch);
            CHECK(logits == again);

            // re-pack the same histories with extra pad columns
            std::vector<std::vector<int>> histories;
            for (int r = 0; r < batch.batch; ++r) {
                std::vector<int> h;
                for (int t = 0; t < batch.predict_pos[static_cast<std::size_t>(r)]; ++t)
                    h.push_back(batch.id(r, t));
                histories.push_back(std::move(h));
            }
            auto shorter = make_batch(histories, cfg.pad_id(), cfg.mask_id(), 12);
            auto longer = make_batch(histories, cfg.pad_id(), cfg.mask_id(), 16);
            Mat a = enc->encode(shorter);
            Mat b = enc->encode(longer);
            CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
        }
    }
}

TEST_CASE("encode rejects malformed batches") {
    EncoderConfig cfg = tiny_config("transformer");
    auto enc = make_encoder(cfg);
    auto batch = demo_batch(cfg);
    batch.ids[0] = cfg.table_size();
    CHECK_THROWS_AS(enc->encode(batch), data_error);

    auto batch2 = demo_batch(cfg);
    batch2.ids[static_cast<std::size_t>(batch2.predict_pos[0])] = 0; // not MASK
    CHECK_THROWS_AS(enc->encode(batch2), data_error);
}

TEST_CASE("training forward matches evaluation when dropout is off") {
    for (const char* backbone : kBackbones) {
        EncoderConfig cfg = tiny_config(backbone);
        auto enc = make_encoder(cfg);
        auto batch = demo_batch(cfg);
        Mat logits = enc->encode(batch);
        for (int r = 0; r < batch.batch; ++r) {
            Vec z = enc->forward_one(batch, r, true, nullptr);
            CHECK((z - logits.row(r).transpose()).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("dropout is reproducible from the stream seed") {
    for (const char* backbone : kBackbones) {
        EncoderConfig cfg = tiny_config(backbone);
        cfg.dropout = 0.3;
        auto enc = make_encoder(cfg);
        auto batch = demo_batch(cfg);
        rng_t r1(make_rng(9, "drop"));
        rng_t r2(make_rng(9, "drop"));
        Vec a = enc->forward_one(batch, 0, true, &r1);
        Vec b = enc->forward_one(batch, 0, true, &r2);
        CHECK(a == b);
        rng_t r3(make_rng(10, "drop"));
        Vec c = enc->forward_one(batch, 0, true, &r3);
        CHECK(a != c);
    }
}

TEST_CASE("end-to-end gradient check against central differences") {
    // label cross-entropy summed over a small batch; relative error well
    // below the 1e-3 contract at 64-bit
    for (const char* backbone : kBackbones) {
        DYNAMIC_SECTION("backbone " << backbone) {
            EncoderConfig cfg = tiny_config(backbone);
            auto enc = make_encoder(cfg);
            auto batch = demo_batch(cfg, 2, 7);
            std::vector<int> labels{3, 8};

            const auto loss_value = [&]() {
                double total = 0.0;
                for (int r = 0; r < batch.batch; ++r) {
                    Vec z = enc->forward_one(batch, r, false, nullptr);
                    total += distill::ce_label_loss(z, labels[static_cast<std::size_t>(r)]);
                }
                return total;
            };

            enc->zero_grads();
            for (int r = 0; r < batch.batch; ++r) {
                Vec z = enc->forward_one(batch, r, false, nullptr);
                enc->backward_one(
                    distill::ce_label_grad(z, labels[static_cast<std::size_t>(r)]));
            }

            double worst = 0.0;
            enc->for_each_param([&](const std::string& name, Mat& v, Mat& g) {
                rng_t pick(make_rng(3, name));
                const int samples =
                    std::min<int>(6, static_cast<int>(v.size()));
                for (int s = 0; s < samples; ++s) {
                    const Eigen::Index idx = static_cast<Eigen::Index>(
                        pick() % static_cast<std::uint64_t>(v.size()));
                    const double h = 1e-6;
                    double* entry = v.data() + idx;
                    const double orig = *entry;
                    *entry = orig + h;
                    const double up = loss_value();
                    *entry = orig - h;
                    const double down = loss_value();
                    *entry = orig;
                    const double numeric = (up - down) / (2.0 * h);
                    const double analytic = *(g.data() + idx);
                    const double err = std::abs(analytic - numeric) /
                                       std::max(1.0, std::abs(numeric));
                    worst = std::max(worst, err);
                }
            });
            CHECK(worst < 1e-3);
            CHECK(worst < 1e-5); // should in fact be far tighter
        }
    }
}

TEST_CASE("gradient reaches every non-pad input position") {
    // distinct ids per position; dilated convolutions are checked inside
    // their receptive field
    for (const char* backbone : {"transformer", "gru"}) {
        EncoderConfig cfg = tiny_config(backbone);
        auto enc = make_encoder(cfg);
        std::vector<int> history{1, 2, 3, 4, 5, 6};
        auto batch = make_batch({history}, cfg.pad_id(), cfg.mask_id(), cfg.max_len);
        enc->zero_grads();
        Vec z = enc->forward_one(batch, 0, false, nullptr);
        enc->backward_one(distill::ce_label_grad(z, 0));
        enc->for_each_param([&](const std::string& name, Mat&, Mat& g) {
            if (name != "embedding") return;
            for (int id : history) CHECK(g.row(id).cwiseAbs().sum() > 0.0);
        });
    }
}

TEST_CASE("checkpoint round-trip and shape validation") {
    auto dir = std::filesystem::temp_directory_path() / "crimealarm_ckpt_test";
    std::filesystem::create_directories(dir);
    for (const char* backbone : kBackbones) {
        EncoderConfig cfg = tiny_config(backbone);
        auto enc = make_encoder(cfg);
        auto batch = demo_batch(cfg);
        Mat before = enc->encode(batch);

        const auto path = dir / (std::string(backbone) + ".ckpt");
        save_encoder(path, *enc);
        auto loaded = load_encoder(path);
        Mat after = loaded->encode(batch);
        CHECK(before == after);
    }
    // tampered header shape must be rejected
    EncoderConfig cfg = tiny_config("gru");
    auto enc = make_encoder(cfg);
    NamedArrays c;
    c.meta = {{"kind", "encoder"},
              {"format_version", 1},
              {"config", encoder_config_to_json(cfg)}};
    enc->for_each_param([&](const std::string& name, Mat& v, Mat&) {
        c.arrays.emplace_back(name, v);
    });
    c.arrays[0].second = Mat::Zero(2, 2);
    const auto bad_path = dir / "bad.ckpt";
    write_container(bad_path, c);
    CHECK_THROWS_AS(load_encoder(bad_path), data_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tcn receptive field covers the configured stack") {
    EncoderConfig cfg = tiny_config("tcn");
    TcnEncoder enc(cfg);
    // layers=2, kernel=3: 1 + 2*2*(1+2) = 13
    CHECK(enc.receptive_field() == 13);
}
