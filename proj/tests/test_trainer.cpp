// Copyright 2026 The xmodal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "xmodal/trainer.hpp"

namespace xmodal::train {
namespace {

namespace fs = std::filesystem;

constexpr std::array<Variant, 4> kVariants{Variant::cyclegan, Variant::cyclegan_mind, Variant::ugatit,
                                           Variant::ugatit_mind};

TrainConfig toy_config(Variant v) {
    TrainConfig c = TrainConfig::for_variant(v);
    c.image_size = 8;
    c.base_channels = 2;
    c.downsample_count = 1;
    c.residual_block_count = 1;
    c.discriminator_layers = 2;
    c.seed = 5;
    return c;
}

std::vector<data::PreprocessedCase> phantom_cases(int count, int size, int phantom_size = 64) {
    std::vector<data::PreprocessedCase> out;
    for (int i = 0; i < count; ++i) out.push_back(data::preprocess_case(data::generate_phantom(i, phantom_size), size));
    return out;
}

ErrorCode code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::invalid_argument;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("xmodal_test_trainer_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST(Config, VariantDefaults) {
    auto cg = TrainConfig::for_variant(Variant::cyclegan_mind);
    EXPECT_EQ(cg.learning_rate, 2e-4);
    EXPECT_EQ(cg.epochs, 1000);
    EXPECT_EQ(cg.weight_decay, 0.0);
    EXPECT_EQ(cg.replay_pool_size, 50);
    EXPECT_EQ(cg.beta1, 0.5);
    EXPECT_EQ(cg.beta2, 0.999);
    auto ug = TrainConfig::for_variant(Variant::ugatit);
    EXPECT_EQ(ug.learning_rate, 1e-4);
    EXPECT_EQ(ug.epochs, 100);
    EXPECT_EQ(ug.weight_decay, 1e-4);
    EXPECT_EQ(ug.weights, losses::LossWeights::for_variant(Variant::ugatit));
    EXPECT_EQ(TrainConfig::desk(Variant::ugatit).max_steps, 2000);
    EXPECT_EQ(TrainConfig::desk(Variant::ugatit).image_size, 64);
}

TEST(Config, KeyValueRoundTripAndPrecedence) {
    auto c = TrainConfig::desk(Variant::cyclegan_mind);
    c.weights.lambda_mind = 60;
    c.seed = 123456789012345ULL;
    EXPECT_EQ(from_map(to_map(c)), c);
    for (const auto& [k, _] : to_map(c))
        EXPECT_NE(std::find(config_keys().begin(), config_keys().end(), k), config_keys().end()) << k;
    EXPECT_EQ(to_map(c).size(), config_keys().size());

    auto kv = parse_config_text("# desk\nvariant = ugatit_mind\nmax_steps=2000  \n\nlambda_mind = 10 # lower\n");
    EXPECT_EQ(kv.size(), 3u);
    kv["lambda_mind"] = "7";  // a flag overriding the file
    auto parsed = from_map(kv);
    EXPECT_EQ(parsed.variant, Variant::ugatit_mind);
    EXPECT_EQ(parsed.weights.lambda_mind, 7.0);
    EXPECT_EQ(parsed.weights.lambda3, 100.0);
    EXPECT_EQ(parsed.learning_rate, 1e-4);
    EXPECT_EQ(parsed.max_steps, 2000);

    EXPECT_EQ(code_of([] { from_map({{"learning_rat", "1"}}); }), ErrorCode::invalid_argument);
    EXPECT_EQ(code_of([] { from_map({{"epochs", "ten"}}); }), ErrorCode::invalid_argument);
    EXPECT_EQ(code_of([] { parse_config_text("epochs 10\n"); }), ErrorCode::invalid_argument);
    EXPECT_EQ(code_of([] { from_map({{"variant", "pix2pix"}}); }), ErrorCode::invalid_argument);
}

TEST(Config, InvariantsRejected) {
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return code_of([&] { c.validate(); });
    };
    EXPECT_EQ(bad([](TrainConfig& c) { c.learning_rate = 0; }), ErrorCode::invalid_argument);
    EXPECT_EQ(bad([](TrainConfig& c) { c.epochs = 0; }), ErrorCode::invalid_argument);
    EXPECT_EQ(bad([](TrainConfig& c) { c.replay_pool_size = -1; }), ErrorCode::invalid_argument);
    EXPECT_EQ(bad([](TrainConfig& c) { c.weights.lambda2 = -1; }), ErrorCode::invalid_argument);
}

TEST(Adam, MinimisesQuadraticAndClampsUnitInterval) {
    ParamList<double> params;
    auto w = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 3}, std::vector<double>{3.0, -2.0, 0.5}), true);
    auto rho = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 1}, 0.9), true);
    params.push_back({"w", w, false});
    params.push_back({"rho", rho, true});
    Adam<double> opt(params, {0.05, 0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        // Pull rho toward 2, outside its admissible range.
        backward(ops::add(ops::sum(ops::square(w)), ops::sum(ops::square(ops::add_scalar(rho, -2.0)))));
        opt.step();
        ASSERT_LE(rho.value()[0], 1.0);
    }
    for (double v : w.value().vec()) EXPECT_NEAR(v, 0.0, 1e-2);
    EXPECT_EQ(rho.value()[0], 1.0);
}

TEST(Adam, FirstStepMagnitudeAndWeightDecay) {
    ParamList<double> params;
    auto w = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 1.0}), true);
    params.push_back({"w", w, false});
    Adam<double> opt(params, {0.01, 0.5, 0.999, 1e-8, 0.0});
    w.mutable_grad().vec() = {4.0, -0.001};
    opt.step();
    // Bias-corrected first step moves each coordinate by ~lr against the gradient sign.
    EXPECT_NEAR(w.value()[0], 0.99, 1e-6);
    EXPECT_NEAR(w.value()[1], 1.01, 1e-4);

    auto u = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 1}, 2.0), true);
    Adam<double> decayed({{"u", u, false}}, {0.01, 0.5, 0.999, 1e-8, 0.1});
    u.mutable_grad().vec() = {0.0};
    decayed.step();
    EXPECT_NEAR(u.value()[0], 1.99, 1e-6);
}

TEST(ImagePool, ContractExamples) {
    std::mt19937_64 rng(1);
    auto img = [](float v) { return Tensor<float>(Shape{1, 1, 2, 2}, v); };
    ImagePool<float> none{0, {}};
    EXPECT_EQ(pool_sample(none, img(1), rng), img(1));
    EXPECT_TRUE(none.images.empty());

    ImagePool<float> pool{3, {}};
    EXPECT_EQ(pool_sample(pool, img(1), rng), img(1));
    EXPECT_EQ(pool.images.size(), 1u);
    pool_sample(pool, img(2), rng);
    pool_sample(pool, img(3), rng);
    EXPECT_EQ(pool.images.size(), 3u);
    for (int i = 0; i < 20; ++i) {
        pool_sample(pool, img(float(10 + i)), rng);
        EXPECT_EQ(pool.images.size(), 3u);
    }
}

TEST(ImagePool, SwapFrequencyAtCapacity) {
    std::mt19937_64 rng(2024);
    ImagePool<float> pool{50, {}};
    for (int i = 0; i < 50; ++i) pool_sample(pool, Tensor<float>(Shape{1, 1, 1, 1}, float(-1 - i)), rng);
    int swaps = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        Tensor<float> fake(Shape{1, 1, 1, 1}, float(i));
        swaps += !(pool_sample(pool, fake, rng) == fake);
    }
    EXPECT_NEAR(double(swaps) / draws, 0.5, 0.02);
}

TEST(EpochPlan, UnpairedCoverageAndDeterminism) {
    for (int batch : {1, 3}) {
        for (long long epoch = 0; epoch < 5; ++epoch) {
            auto plan = plan_epoch(20, batch, 9, epoch);
            EXPECT_EQ(plan.size(), std::size_t(20 / batch));
            std::multiset<int> seen_m, seen_c;
            for (const auto& [m, c] : plan) {
                for (int a : m)
                    for (int b : c) EXPECT_NE(a, b);
                seen_m.insert(m.begin(), m.end());
                seen_c.insert(c.begin(), c.end());
            }
            EXPECT_EQ(std::set<int>(seen_m.begin(), seen_m.end()).size(), seen_m.size());
            EXPECT_EQ(std::set<int>(seen_c.begin(), seen_c.end()).size(), seen_c.size());
            EXPECT_EQ(plan_epoch(20, batch, 9, epoch), plan);
        }
        EXPECT_NE(plan_epoch(20, batch, 9, 0), plan_epoch(20, batch, 9, 1));
    }
    EXPECT_EQ(code_of([] { plan_epoch(3, 2, 0, 0); }), ErrorCode::invalid_argument);
}

struct ToyFixture {
    TrainConfig cfg;
    TrainState state;
    Batch mri, ct;

    explicit ToyFixture(Variant v) : cfg(toy_config(v)), state(init_state(cfg)) {
        auto cases = phantom_cases(2, 8, 32);
        mri = make_batch(cases, {0}, false);
        ct = make_batch(cases, {1}, true);
    }
};

TEST(TrainStep, ReportsDecompositionForEveryVariant) {
    for (auto v : kVariants) {
        ToyFixture f(v);
        auto r = train_step(f.state, f.mri, f.ct, f.cfg);
        EXPECT_TRUE(r.all_finite()) << to_string(v);
        EXPECT_EQ(f.state.step, 1);
        for (std::size_t i = 0; i < losses::kTermCount; ++i)
            EXPECT_EQ(r.present[i], losses::term_applies(v, losses::Term(i))) << to_string(v) << " term " << i;
        auto recomputed = losses::total_objective(v, losses::to_components(r), f.cfg.weights);
        EXPECT_NEAR(recomputed.generator_total, r.generator_total, 1e-9 * std::max(1.0, r.generator_total));
        EXPECT_NEAR(recomputed.discriminator_total, r.discriminator_total, 1e-9);
        if (!is_ugatit(v)) {
            EXPECT_GE(r[losses::Term::adv_d_ct], 0.0);  // -log likelihood
        }
    }
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
    for (auto v : kVariants) {
        ToyFixture f(v);
        f.cfg.learning_rate = 0.0;
        std::vector<Tensor<float>> before;
        for (const auto& p : f.state.bundle.all_params()) before.push_back(p.var.value());
        auto r = train_step(f.state, f.mri, f.ct, f.cfg);
        EXPECT_TRUE(r.all_finite());
        EXPECT_GT(r.generator_total, 0.0);
        auto after = f.state.bundle.all_params();
        for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(after[i].var.value(), before[i]) << after[i].name;
    }
}

TEST(TrainStep, DeterministicGivenStateAndBatches) {
    for (auto v : kVariants) {
        ToyFixture f(v);
        train_step(f.state, f.mri, f.ct, f.cfg);
        TrainState copy = clone_state(f.state);
        auto r1 = train_step(f.state, f.mri, f.ct, f.cfg);
        auto r2 = train_step(copy, f.mri, f.ct, f.cfg);
        EXPECT_EQ(r1.terms, r2.terms);
        EXPECT_EQ(serialize_state(f.state), serialize_state(copy)) << to_string(v);
    }
}

TEST(TrainStep, GeneratorTotalFallsOnFixedBatch) {
    for (auto v : kVariants) {
        ToyFixture f(v);
        f.cfg.learning_rate = is_ugatit(v) ? 1e-3 : 2e-3;
        double first = 0, last = 0;
        for (int i = 0; i < 50; ++i) {
            auto r = train_step(f.state, f.mri, f.ct, f.cfg);
            if (i == 0) first = r.generator_total;
            last = r.generator_total;
        }
        EXPECT_LT(last, first) << to_string(v);
    }
}

TEST(TrainStep, UnpairedContractEnforced) {
    ToyFixture f(Variant::ugatit_mind);
    Batch same = f.ct;
    same.case_ids = f.mri.case_ids;
    EXPECT_EQ(code_of([&] { train_step(f.state, f.mri, same, f.cfg); }), ErrorCode::unpaired_violation);
    EXPECT_EQ(f.state.step, 0);
}

TEST(TrainStep, NonFiniteParameterRaisesDivergenceWithName) {
    ToyFixture f(Variant::cyclegan);
    f.state.bundle.d_ct[0].params().front().var.node()->value[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train_step(f.state, f.mri, f.ct, f.cfg);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.code(), ErrorCode::divergence);
        EXPECT_FALSE(e.term().empty());
    }
}

TEST(Checkpoint, ByteStableRoundTripAndForwardEquality) {
    auto dir = scratch("ckpt");
    for (auto v : {Variant::cyclegan_mind, Variant::ugatit_mind}) {
        ToyFixture f(v);
        for (int i = 0; i < 3; ++i) train_step(f.state, f.mri, f.ct, f.cfg);
        save_checkpoint(f.state, dir / "a.ckpt");
        auto loaded = load_checkpoint(dir / "a.ckpt", &f.cfg);
        save_checkpoint(loaded, dir / "b.ckpt");
        EXPECT_EQ(io::read_file(dir / "a.ckpt"), io::read_file(dir / "b.ckpt"));
        EXPECT_EQ(loaded.step, 3);
        auto x = Var<float>::constant(f.mri.images);
        NoGradGuard ng;
        EXPECT_EQ(f.state.bundle.g_mri2ct.forward(x).image.value(), loaded.bundle.g_mri2ct.forward(x).image.value());
        EXPECT_EQ(f.state.bundle.d_ct[0].forward(x).patch_logits.value(),
                  loaded.bundle.d_ct[0].forward(x).patch_logits.value());
    }
    fs::remove_all(dir);
}

TEST(Checkpoint, DistinctErrorsForCorruptionVersionAndSpec) {
    ToyFixture f(Variant::ugatit);
    train_step(f.state, f.mri, f.ct, f.cfg);
    const std::string bytes = serialize_state(f.state);
    EXPECT_EQ(code_of([&] { deserialize_state(bytes.substr(0, bytes.size() / 2)); }), ErrorCode::corrupt);
    EXPECT_EQ(code_of([&] { deserialize_state(bytes.substr(0, 10)); }), ErrorCode::corrupt);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_EQ(code_of([&] { deserialize_state(flipped); }), ErrorCode::corrupt);
    std::string version = bytes;
    version[4] = 9;
    EXPECT_EQ(code_of([&] { deserialize_state(version); }), ErrorCode::version_mismatch);
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(code_of([&] { deserialize_state(magic); }), ErrorCode::bad_magic);
    auto other = f.cfg;
    other.base_channels = 3;
    EXPECT_EQ(code_of([&] { deserialize_state(bytes, &other); }), ErrorCode::spec_mismatch);
    auto other_variant = toy_config(Variant::ugatit_mind);
    EXPECT_EQ(code_of([&] { deserialize_state(bytes, &other_variant); }), ErrorCode::spec_mismatch);
}

TEST(TrainRun, SmokeDeterminismAndResume) {
    auto root = scratch("run");
    const fs::path data_root = root / "data";
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) {
        auto pc = data::generate_phantom(100 + i, 64, data::phantom_case_id(i));
        data::write_case(data_root / pc.case_id, pc);
        ids.push_back(pc.case_id);
    }
    auto split = data::make_splits(ids, {0.8, 0.2}, 1);
    TrainConfig cfg = TrainConfig::for_variant(Variant::cyclegan_mind);
    cfg.epochs = 2;
    cfg.checkpoint_every = 5;
    cfg.base_channels = 4;

    train_run(cfg, split, data_root, root / "a");
    for (auto f : {"losses.csv", "manifest.json", "checkpoints/latest.ckpt", "checkpoints/step_0000005.ckpt",
                   "checkpoints/step_0000016.ckpt", "samples/step_0000016.pgm"})
        EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
    const std::string csv = io::read_file(root / "a" / "losses.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, csv_header());
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        for (auto token : {"nan", "inf"}) EXPECT_EQ(line.find(token), std::string::npos) << line;
    }
    EXPECT_EQ(n, 16);

    train_run(cfg, split, data_root, root / "b");
    EXPECT_EQ(io::read_file(root / "b" / "losses.csv"), csv);

    RunOptions interrupted;
    interrupted.stop_after = 7;
    train_run(cfg, split, data_root, root / "c", interrupted);
    train_run(cfg, split, data_root, root / "c");
    EXPECT_EQ(io::read_file(root / "c" / "losses.csv"), csv);

    auto m = nlohmann::json::parse(io::read_file(root / "a" / "manifest.json"));
    EXPECT_EQ(m["config"]["variant"], "cyclegan_mind");
    EXPECT_EQ(m["design"]["mind_term"], true);
    EXPECT_EQ(m["config"].size(), config_keys().size());

    auto wrong = cfg;
    wrong.variant = Variant::cyclegan;
    EXPECT_EQ(code_of([&] { train_run(wrong, split, data_root, root / "a"); }), ErrorCode::spec_mismatch);
    fs::remove_all(root);
}

} // namespace
} // namespace xmodal::train
