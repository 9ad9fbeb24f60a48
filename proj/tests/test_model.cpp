#include <doctest.h>

#include <cmath>
#include <numeric>

#include "anchorloss/errors.hpp"
#include "anchorloss/model.hpp"

using namespace anchorloss;

namespace {

bool gradients_agree(double analytic, double fd, double rel = 1e-5,
                     double abs_floor = 1e-7) {
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    return std::abs(analytic - fd) <= std::max(rel * scale, abs_floor);
}

TrainConfig quick_config(LossKind kind, std::size_t epochs, double lr) {
    TrainConfig cfg;
    cfg.loss_kind = kind;
    cfg.epochs = epochs;
    cfg.lr_schedule = {{0, lr}};
    cfg.batch_size = 16;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("dense forward") {
    Rng rng(3);
    auto model = DenseModel::create({3, 4, 2}, HeadActivation::Sigmoid, rng);

    SUBCASE("zero weights and sigmoid head give 0.5 everywhere") {
        model.set_parameters(Vector(model.parameter_count(), 0.0));
        const auto out = model.forward({0.3, -1.0, 2.0});
        for (double q : out.probabilities) CHECK(q == 0.5);
    }

    SUBCASE("identity single layer passes input to the head") {
        auto tiny = DenseModel::create({2, 2}, HeadActivation::Sigmoid, rng);
        // weights = identity, bias = 0
        tiny.set_parameters({1.0, 0.0, 0.0, 1.0, 0.0, 0.0});
        const auto out = tiny.forward({0.7, -0.3});
        CHECK(out.probabilities[0] == sigmoid(0.7));
        CHECK(out.probabilities[1] == sigmoid(-0.3));
    }

    SUBCASE("outputs finite and inside (0,1)") {
        Rng data_rng(5);
        for (int i = 0; i < 50; ++i) {
            const auto out = model.forward(
                {data_rng.normal(0, 10), data_rng.normal(0, 10), data_rng.normal(0, 10)});
            for (double q : out.probabilities) {
                CHECK(std::isfinite(q));
                CHECK(q > 0.0);
                CHECK(q < 1.0);
            }
        }
    }

    SUBCASE("input dimension mismatch") {
        CHECK_THROWS_AS(model.forward({1.0}), std::invalid_argument);
    }
}

TEST_CASE("dense backward") {
    Rng rng(11);
    auto model = DenseModel::create({3, 5, 2}, HeadActivation::Sigmoid, rng);
    const Vector input{0.4, -0.7, 1.1};

    SUBCASE("zero loss gradient gives zero parameter gradients") {
        const auto cache = model.forward(input);
        const Vector grads = model.backward(cache, {0.0, 0.0});
        for (double g : grads) CHECK(g == 0.0);
    }

    SUBCASE("single linear layer matches FD") {
        auto linear = DenseModel::create({2, 2}, HeadActivation::Sigmoid, rng);
        const Vector x{0.9, -0.4};
        const Vector labels{1.0, 0.0};
        const auto loss_at = [&](const Vector& params) {
            auto probe = linear;
            probe.set_parameters(params);
            return bce(labels, probe.forward(x).probabilities).value;
        };
        const auto cache = linear.forward(x);
        const Vector analytic =
            linear.backward(cache, bce_gradient(labels, cache.probabilities));
        const Vector fd =
            finite_difference_gradient(loss_at, linear.parameters(), 1e-6);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            CHECK(gradients_agree(analytic[i], fd[i]));
        }
    }

    SUBCASE("anchor loss end to end on a toy model, dynamic anchors frozen") {
        auto toy = DenseModel::create({1, 3}, HeadActivation::Sigmoid, rng);  // 6 params
        const Vector x{0.8};
        const Vector labels{0.0, 1.0, 0.0};
        AnchorLossConfig al_cfg;
        al_cfg.anchor_mode = AnchorMode::DynamicTarget;
        al_cfg.gamma_background = 2.0;

        const auto base = toy.forward(x);
        const auto anchors = anchor_probabilities(labels, base.probabilities, al_cfg);
        const auto loss_at = [&](const Vector& params) {
            auto probe = toy;
            probe.set_parameters(params);
            return anchor_loss_with_anchors(labels, probe.forward(x).probabilities,
                                            anchors, al_cfg)
                .value;
        };
        const Vector analytic = toy.backward(
            base,
            anchor_loss_gradient_with_anchors(labels, base.probabilities, anchors,
                                              al_cfg));
        const Vector fd = finite_difference_gradient(loss_at, toy.parameters(), 1e-6);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            CHECK(gradients_agree(analytic[i], fd[i]));
        }
    }

    SUBCASE("softmax head JVP matches FD through softmax CE") {
        auto clf = DenseModel::create({2, 4, 3}, HeadActivation::Softmax, rng);
        const Vector x{0.35, -0.8};
        const Vector labels{0.0, 0.0, 1.0};
        const TrainConfig cfg = quick_config(LossKind::CE, 1, 0.1);

        const auto cache = clf.forward(x);
        // relu kink safety for the FD probe
        for (double z : cache.preactivations[0]) REQUIRE(std::abs(z) > 1e-4);
        const auto eval = eval_classification_loss(LossKind::CE, cfg, labels,
                                                   cache.probabilities, cache.logits,
                                                   clf.head());
        const Vector analytic = clf.backward(cache, eval.dloss_dprob);
        const Vector fd = finite_difference_gradient(
            [&](const Vector& params) {
                auto probe = clf;
                probe.set_parameters(params);
                return softmax_ce(labels, probe.forward(x).logits).value;
            },
            clf.parameters(), 1e-6);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            CHECK(gradients_agree(analytic[i], fd[i]));
        }
    }
}

TEST_CASE("conv heatmap model") {
    Rng rng(13);
    auto model = ConvHeatmapModel::create(6, 6, 1, 1, rng);
    CHECK(model.parameter_count() == 30);

    Image image(6, 6);
    Rng pix(17);
    for (double& v : image.pixels) v = pix.uniform();

    SUBCASE("forward emits sigmoid heatmaps of the input size") {
        const auto out = model.forward(image);
        REQUIRE(out.heatmaps.size() == 1);
        CHECK(out.heatmaps[0].height == 6);
        CHECK(out.heatmaps[0].width == 6);
        for (double q : out.heatmaps[0].values) {
            CHECK(q > 0.0);
            CHECK(q < 1.0);
        }
    }

    SUBCASE("backward matches FD through the pose anchor loss, q* frozen") {
        const auto target = encode_gaussian({3.0, 3.0, true, 0.8}, 6, 6);
        PoseLossConfig pose_cfg;
        pose_cfg.gamma = 2.0;

        const auto base = model.forward(image);
        // fixed-seed sanity: no relu preactivation or pool tie near the FD step
        for (double z : base.z1) REQUIRE(std::abs(z) > 1e-4);
        for (double z : base.z2) REQUIRE(std::abs(z) > 1e-4);

        const auto anchor =
            select_anchor(target.heatmap, base.heatmaps[0], pose_cfg.anchor_threshold);
        const auto loss_at = [&](const Vector& params) {
            auto probe = model;
            probe.set_parameters(params);
            return pose_anchor_loss_with_anchor(
                       target.heatmap, probe.forward(image).heatmaps[0], anchor,
                       pose_cfg)
                .value;
        };
        const Vector analytic = model.backward(
            base, {pose_anchor_loss_gradient_with_anchor(target.heatmap,
                                                         base.heatmaps[0], anchor,
                                                         pose_cfg)});
        const Vector fd = finite_difference_gradient(loss_at, model.parameters(), 1e-6);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            CHECK(gradients_agree(analytic[i], fd[i]));
        }
    }

    SUBCASE("odd input size is rejected") {
        CHECK_THROWS_AS(ConvHeatmapModel::create(5, 6, 1, 1, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("sgd_step") {
    SUBCASE("momentum 0 is plain gradient descent") {
        Vector params{1.0, -2.0};
        Vector velocity(2, 0.0);
        sgd_step(params, {0.5, -1.0}, 0.1, 0.0, velocity);
        CHECK(params[0] == doctest::Approx(0.95).epsilon(1e-15));
        CHECK(params[1] == doctest::Approx(-1.9).epsilon(1e-15));
    }

    SUBCASE("zero gradient and velocity leave parameters unchanged") {
        Vector params{3.0, 4.0};
        Vector velocity(2, 0.0);
        sgd_step(params, {0.0, 0.0}, 0.1, 0.9, velocity);
        CHECK(params == Vector{3.0, 4.0});
    }

    SUBCASE("quadratic bowl converges") {
        Vector params{1.0, -2.0};
        Vector velocity(2, 0.0);
        double prev = 5.0;
        for (int step = 0; step < 100; ++step) {
            const Vector grads{2.0 * params[0], 2.0 * params[1]};
            sgd_step(params, grads, 0.3, 0.0, velocity);
            const double loss = params[0] * params[0] + params[1] * params[1];
            CHECK(loss < prev);
            prev = loss;
        }
        CHECK(prev < 1e-6);
    }

    SUBCASE("shape mismatch") {
        Vector params{1.0};
        Vector velocity{0.0};
        CHECK_THROWS_AS(sgd_step(params, {1.0, 2.0}, 0.1, 0.9, velocity),
                        std::invalid_argument);
    }
}

TEST_CASE("ohem_filter") {
    SUBCASE("rho 1 keeps everything") {
        CHECK(ohem_filter({3.0, 1.0, 2.0}, 1.0) ==
              std::vector<std::size_t>{0, 1, 2});
    }

    SUBCASE("ceil(rho n) largest, confirmed by its own bracket") {
        // ceil(0.34 * 3) = 2 -> the two largest losses sit at indices 0 and 2
        CHECK(ohem_filter({3.0, 1.0, 2.0}, 0.34) == std::vector<std::size_t>{0, 2});
    }

    SUBCASE("ties keep the lowest indices") {
        CHECK(ohem_filter(Vector(6, 1.0), 0.5) == std::vector<std::size_t>{0, 1, 2});
    }

    SUBCASE("matches a brute-force sort on random inputs") {
        Rng rng(19);
        for (int trial = 0; trial < 100; ++trial) {
            Vector losses(1 + rng.index(20));
            for (double& v : losses) v = rng.uniform();
            const double rho = rng.uniform(0.05, 1.0);
            const auto got = ohem_filter(losses, rho);

            std::vector<std::size_t> order(losses.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) {
                                 return losses[a] > losses[b];
                             });
            order.resize(static_cast<std::size_t>(
                std::ceil(rho * static_cast<double>(losses.size()))));
            std::sort(order.begin(), order.end());
            CHECK(got == order);
        }
    }

    CHECK_THROWS_AS(ohem_filter({}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(ohem_filter({1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ohem_filter({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("loss_for_epoch") {
    TrainConfig cfg = quick_config(LossKind::AL, 10, 0.1);
    cfg.warmup_epochs = 5;
    CHECK(loss_for_epoch(4, cfg) == LossKind::CE);
    CHECK(loss_for_epoch(5, cfg) == LossKind::AL);
    cfg.warmup_epochs = 0;
    CHECK(loss_for_epoch(0, cfg) == LossKind::AL);
}

TEST_CASE("mse_heatmap_loss") {
    Heatmap a(3, 3), b(3, 3);
    CHECK(mse_heatmap_loss(a, b).value == 0.0);

    b.at(1, 2) = 0.5;
    CHECK(mse_heatmap_loss(a, b).value == 0.25);

    SUBCASE("matches a brute-force double loop") {
        Rng rng(23);
        Heatmap x(4, 5), y(4, 5);
        for (double& v : x.values) v = rng.uniform();
        for (double& v : y.values) v = rng.uniform();
        double expected = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 5; ++c) {
                expected += (x.at(r, c) - y.at(r, c)) * (x.at(r, c) - y.at(r, c));
            }
        }
        CHECK(mse_heatmap_loss(x, y).value == doctest::Approx(expected).epsilon(1e-15));
    }

    CHECK_THROWS_AS(mse_heatmap_loss(Heatmap(2, 2), Heatmap(2, 3)),
                    std::invalid_argument);
}

TEST_CASE("training determinism and schedules") {
    const auto ds = gen_confusable_blobs(41, 20, 2, 1.0, 0.0);
    const auto [train, val] = split(ds, 0.25, 41);

    SUBCASE("identical config and seed give bitwise-identical runs") {
        TrainConfig cfg = quick_config(LossKind::AL, 12, 0.2);
        cfg.anchor.gamma_background = 0.5;

        Rng init_a(cfg.seed), init_b(cfg.seed);
        auto model_a = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init_a);
        auto model_b = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init_b);
        const auto run_a = train_classifier(model_a, train, val, cfg);
        const auto run_b = train_classifier(model_b, train, val, cfg);

        REQUIRE(run_a.trace.size() == 12);
        CHECK(run_a.parameter_checksum == run_b.parameter_checksum);
        for (std::size_t e = 0; e < run_a.trace.size(); ++e) {
            CHECK(run_a.trace[e].train_loss == run_b.trace[e].train_loss);
            CHECK(run_a.trace[e].val_loss == run_b.trace[e].val_loss);
            CHECK(run_a.trace[e].val_primary == run_b.trace[e].val_primary);
        }
    }

    SUBCASE("warmup epochs are labeled CE and follow loss_for_epoch") {
        TrainConfig cfg = quick_config(LossKind::AL, 8, 0.2);
        cfg.warmup_epochs = 5;
        Rng init(cfg.seed);
        auto model = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init);
        const auto run = train_classifier(model, train, val, cfg);
        for (std::size_t e = 0; e < run.trace.size(); ++e) {
            CHECK(run.trace[e].active_loss == loss_for_epoch(e, cfg));
            CHECK(run.trace[e].active_loss ==
                  (e < 5 ? LossKind::CE : LossKind::AL));
        }
    }

    SUBCASE("epochs 0 leaves the model untouched") {
        TrainConfig cfg = quick_config(LossKind::BCE, 0, 0.2);
        Rng init(cfg.seed);
        auto model = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init);
        const Vector before = model.parameters();
        const auto run = train_classifier(model, train, val, cfg);
        CHECK(run.trace.empty());
        CHECK(model.parameters() == before);
    }

    SUBCASE("ohem rho 1 is bitwise identical to plain training") {
        TrainConfig plain = quick_config(LossKind::BCE, 10, 0.2);
        TrainConfig ohem = plain;
        ohem.ohem_ratio = 1.0;

        Rng init_a(plain.seed), init_b(plain.seed);
        auto model_a = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init_a);
        auto model_b = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init_b);
        const auto run_plain = train_classifier(model_a, train, val, plain);
        const auto run_ohem = train_classifier(model_b, train, val, ohem);

        CHECK(run_plain.parameter_checksum == run_ohem.parameter_checksum);
        for (std::size_t e = 0; e < run_plain.trace.size(); ++e) {
            CHECK(run_plain.trace[e].train_loss == run_ohem.trace[e].train_loss);
            CHECK(run_plain.trace[e].val_loss == run_ohem.trace[e].val_loss);
        }
    }

    SUBCASE("divergence aborts with the epoch index") {
        TrainConfig cfg = quick_config(LossKind::MSE, 50, 1e9);
        Rng init(cfg.seed);
        auto model = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init);
        CHECK_THROWS_AS(train_classifier(model, train, val, cfg), DivergenceError);
    }

    SUBCASE("separable blobs train to high accuracy") {
        TrainConfig cfg = quick_config(LossKind::AL, 150, 0.5);
        cfg.anchor.gamma_background = 0.5;
        Rng init(cfg.seed);
        auto model = DenseModel::create({2, 8, 4}, HeadActivation::Sigmoid, init);
        const auto run = train_classifier(model, train, val, cfg);
        CHECK(run.trace.back().val_primary >= 0.9);
    }
}

TEST_CASE("pose training smoke") {
    const auto ds = gen_symmetric_keypoints(43, 24, 16, 16, 8.0, 1.0);
    const auto [train, val] = split(ds, 0.25, 43);

    TrainConfig cfg = quick_config(LossKind::ALPose, 8, 0.01);
    cfg.pose.gamma = 2.0;
    cfg.batch_size = 6;

    Rng init(cfg.seed);
    auto model = ConvHeatmapModel::create(16, 16, 4, 2, init);
    const auto run = train_pose(model, train, val, cfg);

    REQUIRE(run.trace.size() == 8);
    CHECK(run.trace.back().train_loss < run.trace.front().train_loss);
    for (const auto& m : run.trace) {
        CHECK(std::isfinite(m.train_loss));
        CHECK(m.val_primary >= 0.0);
        CHECK(m.val_primary <= 1.0);
    }

    SUBCASE("pose determinism") {
        Rng init_b(cfg.seed);
        auto model_b = ConvHeatmapModel::create(16, 16, 4, 2, init_b);
        const auto run_b = train_pose(model_b, train, val, cfg);
        CHECK(run.parameter_checksum == run_b.parameter_checksum);
        for (std::size_t e = 0; e < run.trace.size(); ++e) {
            CHECK(run.trace[e].train_loss == run_b.trace[e].train_loss);
        }
    }
}

}  // TEST_SUITE
