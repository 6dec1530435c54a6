#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "crimealarm/trainer.hpp"

using namespace crimealarm;
using namespace crimealarm::train;

namespace {

data::DatasetBundle small_bundle(std::uint64_t seed = 21) {
    data::SynthParams p;
    p.n_spots = 30;
    p.n_classes = 20;
    p.switch_prob = 0.4;
    p.len_lo = 8;
    p.len_hi = 20;
    rng_t rng(make_rng(seed, "trainer-bundle"));
    auto records = data::synth_generate(p, rng);
    data::PrepareOptions opt;
    opt.max_len = 8;
    opt.n_negatives = 8;
    opt.seed = seed;
    return data::prepare_dataset(records, opt);
}

enc::EncoderConfig tiny_encoder(std::uint64_t init_seed = 0) {
    enc::EncoderConfig e;
    e.backbone = "transformer";
    e.num_layers = 1;
    e.num_heads = 2;
    e.embed_dim = 8;
    e.hidden_dim = 16;
    e.max_len = 12;
    e.dropout = 0.1;
    e.init_seed = init_seed;
    return e;
}

TrainerConfig small_config(int peers = 2) {
    TrainerConfig cfg;
    cfg.peers = peers;
    cfg.total_epochs = 10;
    cfg.batch_size = 16;
    cfg.base_lr = 1e-3;
    cfg.seed = 5;
    cfg.encoders = {tiny_encoder()};
    cfg.evaluate_val = false;
    cfg.distill.alpha = 1.0;
    cfg.distill.beta = 1.0;
    cfg.distill.gamma = 1.0;
    return cfg;
}

std::vector<Mat> snapshot(enc::Encoder& e) {
    std::vector<Mat> out;
    e.for_each_param([&](const std::string&, Mat& v, Mat&) { out.push_back(v); });
    return out;
}

bool identical(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

TEST_CASE("training is deterministic in the seed") {
    auto bundle = small_bundle();
    auto cfg = small_config();
    Trainer a(bundle, cfg);
    Trainer b(bundle, cfg);
    for (int i = 0; i < 2; ++i) {
        a.run_epoch();
        b.run_epoch();
    }
    for (int k = 0; k < 2; ++k)
        CHECK(identical(snapshot(a.peer(k)), snapshot(b.peer(k))));
    REQUIRE(a.history().size() == b.history().size());
    for (std::size_t i = 0; i < a.history().size(); ++i)
        CHECK(a.history()[i].total == b.history()[i].total);
}

TEST_CASE("distillation fully disabled equals independent CE training") {
    auto bundle = small_bundle();

    auto cfg = small_config(2);
    cfg.encoders = {tiny_encoder(1001), tiny_encoder(1002)};
    cfg.distill.no_tc = true;
    cfg.distill.no_nc = true;
    Trainer joint(bundle, cfg);
    joint.run_epoch();
    joint.run_epoch();

    for (int k = 0; k < 2; ++k) {
        auto solo_cfg = small_config(1);
        solo_cfg.encoders = {tiny_encoder(k == 0 ? 1001 : 1002)};
        Trainer solo(bundle, solo_cfg);
        solo.run_epoch();
        solo.run_epoch();
        CHECK(identical(snapshot(joint.peer(k)), snapshot(solo.peer(0))));
    }
}

TEST_CASE("step breakdown matches a compositional oracle over captured logits") {
    auto bundle = small_bundle();
    auto cfg = small_config(2);
    cfg.encoders = {tiny_encoder(7)};
    for (auto& e : cfg.encoders) e.dropout = 0.0; // logits recomputable
    cfg.distill.alpha = 1.5;
    cfg.distill.beta = 2.0;
    cfg.distill.epsilon = 0.2;
    Trainer trainer(bundle, cfg);

    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    std::vector<std::vector<int>> histories;
    std::vector<int> labels;
    for (auto i : idx) {
        histories.push_back(bundle.train[i].input);
        labels.push_back(bundle.train[i].target);
    }
    auto batch = enc::make_batch(histories, bundle.vocab.pad_id, bundle.vocab.mask_id,
                                 trainer.model_len());
    std::vector<Mat> captured;
    for (int k = 0; k < 2; ++k) captured.push_back(trainer.peer(k).encode(batch));

    auto result = trainer.training_step(idx);

    // recompute every term outside the trainer from the captured logits,
    // replaying the iteration's random streams
    const int B = static_cast<int>(idx.size());
    const double t = 0.0;
    rng_t phase_rng = make_rng(cfg.seed, "phase", 0, 0);
    const auto phase = distill::phase_gate(t, cfg.distill.tau0, cfg.distill.tau1,
                                           uniform01(phase_rng));
    CHECK(phase == result.phase);
    rng_t mask_rng = make_rng(cfg.seed, "mask", 0, 0);
    std::vector<distill::Mask> masks;
    for (int r = 0; r < B; ++r)
        masks.push_back(distill::curriculum_mask(t, cfg.distill.tau1,
                                                 labels[static_cast<std::size_t>(r)],
                                                 bundle.vocab.frequency, mask_rng));

    std::vector<std::vector<double>> probs(2, std::vector<double>(static_cast<std::size_t>(B)));
    std::vector<std::vector<distill::TargetSplit>> splits(
        2, std::vector<distill::TargetSplit>(static_cast<std::size_t>(B)));
    for (int k = 0; k < 2; ++k)
        for (int r = 0; r < B; ++r) {
            splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                distill::decouple_target(
                    captured[static_cast<std::size_t>(k)].row(r).transpose(),
                    labels[static_cast<std::size_t>(r)]);
            probs[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)].p_target;
        }
    auto flags = distill::truncation_flags(probs, cfg.distill.epsilon);
    for (int r = 0; r < B; ++r)
        if (flags[static_cast<std::size_t>(r)])
            for (int k = 0; k < 2; ++k)
                splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] =
                    distill::TargetSplit{1.0, 0.0};

    std::vector<PeerTerms> expected(2);
    for (int r = 0; r < B; ++r) {
        std::vector<Vec> row{captured[0].row(r).transpose(),
                             captured[1].row(r).transpose()};
        std::vector<distill::TargetSplit> row_splits{splits[0][static_cast<std::size_t>(r)],
                                                     splits[1][static_cast<std::size_t>(r)]};
        auto jb = distill::joint_loss(row, labels[static_cast<std::size_t>(r)], row_splits,
                                      phase, masks[static_cast<std::size_t>(r)],
                                      cfg.distill);
        for (int k = 0; k < 2; ++k) {
            expected[static_cast<std::size_t>(k)].ce += jb.ce[static_cast<std::size_t>(k)] / B;
            expected[static_cast<std::size_t>(k)].tc += jb.tc[static_cast<std::size_t>(k)] / B;
            expected[static_cast<std::size_t>(k)].nc += jb.nc[static_cast<std::size_t>(k)] / B;
        }
    }
    for (int k = 0; k < 2; ++k) {
        CHECK(result.peers[static_cast<std::size_t>(k)].ce ==
              Catch::Approx(expected[static_cast<std::size_t>(k)].ce).epsilon(1e-10));
        CHECK(result.peers[static_cast<std::size_t>(k)].tc ==
              Catch::Approx(expected[static_cast<std::size_t>(k)].tc).epsilon(1e-10));
        CHECK(result.peers[static_cast<std::size_t>(k)].nc ==
              Catch::Approx(expected[static_cast<std::size_t>(k)].nc).epsilon(1e-10));
    }
}

TEST_CASE("resume reproduces an uninterrupted run bitwise") {
    auto bundle = small_bundle();
    auto dir = std::filesystem::temp_directory_path() / "crimealarm_resume_test";
    std::filesystem::remove_all(dir);

    auto cfg = small_config(2);
    cfg.total_epochs = 4;
    cfg.run_dir = dir / "full";
    Trainer full(bundle, cfg);
    full.run();

    Trainer resumed(bundle, [&] {
        auto c = cfg;
        c.run_dir = dir / "resumed";
        return c;
    }());
    resumed.resume_from(cfg.run_dir / "checkpoints" / "epoch_0002");
    CHECK(resumed.epoch() == 2);
    resumed.run();

    for (int k = 0; k < 2; ++k)
        CHECK(identical(snapshot(full.peer(k)), snapshot(resumed.peer(k))));
    std::filesystem::remove_all(dir);
}

TEST_CASE("identically initialized peers stay identical") {
    auto bundle = small_bundle();
    auto cfg = small_config(2);
    cfg.encoders = {tiny_encoder(42), tiny_encoder(42)};
    for (auto& e : cfg.encoders) e.dropout = 0.2; // shared streams keep twins in step
    Trainer trainer(bundle, cfg);
    trainer.run_epoch();
    trainer.run_epoch();
    CHECK(identical(snapshot(trainer.peer(0)), snapshot(trainer.peer(1))));
}

TEST_CASE("phase follows the curriculum schedule") {
    auto bundle = small_bundle();
    auto cfg = small_config(2);
    cfg.total_epochs = 10; // t = epoch / 10
    Trainer trainer(bundle, cfg);
    for (int e = 0; e < 10; ++e) trainer.run_epoch();
    for (const auto& step : trainer.history()) {
        if (step.t < cfg.distill.tau0) CHECK(step.phase == distill::Phase::simple);
        if (step.t > cfg.distill.tau1) CHECK(step.phase == distill::Phase::difficult);
        CHECK(std::isfinite(step.total));
        for (const auto& p : step.peers) {
            CHECK(std::isfinite(p.ce));
            CHECK(std::isfinite(p.tc));
            CHECK(std::isfinite(p.nc));
        }
        // the first epoch masks every non-target, so the non-target term is
        // skipped by contract
        if (step.t == 0.0)
            for (const auto& p : step.peers) CHECK(p.nc == 0.0);
    }
}

TEST_CASE("validation history and best checkpoint") {
    auto bundle = small_bundle();
    auto dir = std::filesystem::temp_directory_path() / "crimealarm_val_test";
    std::filesystem::remove_all(dir);
    auto cfg = small_config(2);
    cfg.total_epochs = 2;
    cfg.evaluate_val = true;
    cfg.run_dir = dir;
    Trainer trainer(bundle, cfg);
    trainer.run();
    CHECK(trainer.validation_history().size() == 2);
    CHECK(std::filesystem::exists(dir / "best" / "peer0.ckpt"));
    CHECK(std::filesystem::exists(dir / "final" / "optimizer.bin"));
    CHECK(std::filesystem::exists(dir / "train_log.ndjson"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("select_peer_for_eval") {
    auto bundle = small_bundle();
    Trainer trainer(bundle, small_config(2));
    CHECK(trainer.select_peer_for_eval() == 0);
    CHECK(trainer.select_peer_for_eval(1) == 1);
    CHECK_THROWS_AS(trainer.select_peer_for_eval(2), config_error);
}

TEST_CASE("mixed backbones train together") {
    auto bundle = small_bundle();
    auto cfg = small_config(2);
    auto gru = tiny_encoder(3);
    gru.backbone = "gru";
    gru.hidden_dim = 10;
    cfg.encoders = {tiny_encoder(2), gru};
    cfg.total_epochs = 1;
    Trainer trainer(bundle, cfg);
    trainer.run_epoch();
    for (const auto& step : trainer.history()) CHECK(std::isfinite(step.total));
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = small_config();
    cfg.peers = 3;
    cfg.encoders = {tiny_encoder(), tiny_encoder()};
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = small_config(1); // CE baseline allowed
    CHECK_NOTHROW(cfg.validate());
}
