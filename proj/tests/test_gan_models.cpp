#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "grad_check.hpp"
#include "lmpforge/errors.hpp"
#include "lmpforge/gan_models.hpp"
#include "lmpforge/losses.hpp"

using namespace lmpforge;
namespace fs = std::filesystem;

namespace {

Tensor filled_input(std::vector<int> shape, uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), size_t(a.size()) * sizeof(double)) == 0;
}

// Small enough that finite differences over every weight stay cheap.
ModelConfig tiny_config() {
    ModelConfig cfg = ModelConfig::make(CaseTag::case1, 3, 3, 2);
    cfg.g_maps = {2, 3, 2, 2, 2};
    cfg.d_maps = {2, 3, 4, 3, 2};
    cfg.validate();
    return cfg;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / "lmpforge_gan_test";
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("model config defaults per case") {
    ModelConfig c1 = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    CHECK(c1.g_in_channels == 4);
    CHECK(c1.d_in_channels() == 5);
    CHECK(c1.kernel_h == 3);
    CHECK(c1.kernel_w == 3);
    CHECK(c1.g_maps == std::vector<int>{64, 256, 1024, 512, 64});
    CHECK(c1.d_maps == std::vector<int>{64, 320, 1024, 512, 256});

    ModelConfig c2 = ModelConfig::make(CaseTag::case2, 12, 18, 4);
    CHECK(c2.g_in_channels == 16);
    CHECK(c2.d_hist_channels == 4);
    CHECK(c2.d_in_channels() == 5);
    CHECK(c2.kernel_h == 12);
    CHECK(c2.kernel_w == 18);
    CHECK(c2.g_maps == std::vector<int>{64, 128, 256, 128, 64});
}

TEST_CASE("model config validation rejects inconsistent setups") {
    ModelConfig cfg = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    cfg.kernel_h = 5;  // discriminator valid conv would not fit
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    cfg.g_in_channels = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::make(CaseTag::case2, 12, 18, 4);
    cfg.g_in_channels = 4;  // case2 wants 4 channels per history day
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    cfg.g_maps.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    CHECK_THROWS_AS(case_from_name("case3"), ConfigError);
    CHECK(case_from_name(case_name(CaseTag::case2)) == CaseTag::case2);
}

TEST_CASE("layer specs carry conv fields exactly for convolutional kinds") {
    for (CaseTag tag : {CaseTag::case1, CaseTag::case2}) {
        ModelConfig cfg = tag == CaseTag::case1 ? ModelConfig::make(tag, 3, 3, 4)
                                                : ModelConfig::make(tag, 12, 18, 4);
        for (const auto& specs :
             {generator_layer_specs(cfg), discriminator_layer_specs(cfg)}) {
            for (const LayerSpec& s : specs) {
                const bool conv = s.kind == "conv2d" || s.kind == "conv2d_transpose";
                const bool has_fields =
                    s.kernel_h > 0 && s.kernel_w > 0 && s.stride_h > 0 && s.stride_w > 0 &&
                    (s.padding == "same" || s.padding == "valid");
                CHECK(conv == has_fields);
            }
        }
    }
}

TEST_CASE("layer spec ladders follow the architecture") {
    ModelConfig cfg = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    auto gs = generator_layer_specs(cfg);
    REQUIRE(gs.size() == 15);
    CHECK(gs[0].kind == "conv2d_transpose");
    CHECK(gs[0].feature_maps == 64);
    CHECK(gs[0].padding == "same");
    CHECK(gs[3].kind == "concat");
    CHECK(gs[3].feature_maps == 256);
    CHECK(gs[4].feature_maps == 1024);
    CHECK(gs[13].kind == "conv2d");
    CHECK(gs[13].feature_maps == 1);
    CHECK(gs[14].kind == "tanh");

    auto ds = discriminator_layer_specs(cfg);
    REQUIRE(ds.size() == 19);
    CHECK(ds[0].kind == "conv2d");
    CHECK(ds[0].padding == "valid");
    CHECK(ds[2].kind == "leaky_relu");
    CHECK(ds[2].slope == doctest::Approx(0.2));
    CHECK(ds[3].kind == "dropout");
    CHECK(ds[3].rate == doctest::Approx(0.3));
    CHECK(ds[4].kind == "concat");
    CHECK(ds[4].feature_maps == 320);
    CHECK(ds[17].kind == "dense");
    CHECK(ds[17].feature_maps == 1);
    CHECK(ds[18].kind == "sigmoid");
}

TEST_CASE("initialization is seeded and shaped") {
    ModelConfig cfg = tiny_config();
    Rng r1(42), r2(42), r3(43);
    Generator a = build_generator(cfg, r1);
    Generator b = build_generator(cfg, r2);
    Generator c = build_generator(cfg, r3);

    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool all_same = true, any_diff_seed = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_same = all_same && same_bits(pa[i]->value, pb[i]->value);
        any_diff_seed = any_diff_seed || !same_bits(pa[i]->value, pc[i]->value);
    }
    CHECK(all_same);
    CHECK(any_diff_seed);

    // Weights live in [-r, r]; norm scales start at 1, shifts and biases at 0.
    for (int64_t i = 0; i < a.l1.kernel.value.size(); ++i) {
        CHECK(a.l1.kernel.value.data()[i] >= -cfg.init_range);
        CHECK(a.l1.kernel.value.data()[i] <= cfg.init_range);
    }
    CHECK(a.l1.kernel.value.min() < a.l1.kernel.value.max());
    CHECK(a.l1.gamma.value.min() == 1.0);
    CHECK(a.l1.gamma.value.max() == 1.0);
    CHECK(a.l1.beta.value.min() == 0.0);
    CHECK(a.l1.beta.value.max() == 0.0);
    CHECK(a.skip.b.value.max() == 0.0);
    for (BnState* bn : a.bn_states()) {
        CHECK(bn->running_mean.max() == 0.0);
        CHECK(bn->running_var.min() == 1.0);
        CHECK(bn->running_var.max() == 1.0);
    }
}

TEST_CASE("case1 shapes: generator 3x3x4 -> 3x3x1, discriminator 3x3x5 -> scalar") {
    ModelConfig cfg = ModelConfig::make(CaseTag::case1, 3, 3, 4);
    Rng rng(11);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);

    Graph g;
    VarId y = gen.forward(g, g.input(filled_input({3, 3, 4}, 1)), false, false);
    CHECK(g.val(y).shape() == std::vector<int>{3, 3, 1});
    CHECK(g.val(y).all_finite());
    CHECK(g.val(y).min() >= -1.0);
    CHECK(g.val(y).max() <= 1.0);

    VarId s = dis.forward(g, g.input(filled_input({3, 3, 5}, 2)), false, false, nullptr);
    CHECK(g.val(s).shape() == std::vector<int>{1});
    CHECK(g.val(s).data()[0] >= 0.0);
    CHECK(g.val(s).data()[0] <= 1.0);

    // Batched variants keep the leading axis.
    VarId yb = gen.forward(g, g.input(filled_input({4, 3, 3, 4}, 3)), false, false);
    CHECK(g.val(yb).shape() == std::vector<int>{4, 3, 3, 1});
    VarId sb = dis.forward(g, g.input(filled_input({4, 3, 3, 5}, 4)), false, false, nullptr);
    CHECK(g.val(sb).shape() == std::vector<int>{4, 1});

    // Wrong channel counts are rejected.
    Graph g2;
    CHECK_THROWS_AS(gen.forward(g2, g2.input(filled_input({3, 3, 5}, 5)), false, false),
                    DimensionError);
    CHECK_THROWS_AS(dis.forward(g2, g2.input(filled_input({3, 3, 4}, 6)), false, false, nullptr),
                    DimensionError);
}

TEST_CASE("case2 shapes: generator 12x18x16 -> 12x18x1, discriminator 12x18x5 -> scalar") {
    ModelConfig cfg = ModelConfig::make(CaseTag::case2, 12, 18, 4);
    Rng rng(12);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);

    Graph g;
    VarId y = gen.forward(g, g.input(filled_input({12, 18, 16}, 1)), false, false);
    CHECK(g.val(y).shape() == std::vector<int>{12, 18, 1});
    CHECK(g.val(y).all_finite());

    VarId s = dis.forward(g, g.input(filled_input({12, 18, 5}, 2)), false, false, nullptr);
    CHECK(g.val(s).shape() == std::vector<int>{1});
    CHECK(g.val(s).data()[0] >= 0.0);
    CHECK(g.val(s).data()[0] <= 1.0);

    // The full-grid valid conv collapses space before the dense stack, so the
    // projection width is 64 conv maps plus the 12*18*5 flattened input.
    CHECK(dis.proj.w.value.dim(0) == 64 + 12 * 18 * 5);
    CHECK(dis.proj.w.value.dim(1) == 320);
}

TEST_CASE("plain-tensor helpers mirror the graph forwards") {
    ModelConfig cfg = tiny_config();
    Rng rng(21);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);

    Tensor x = filled_input({3, 3, 2}, 7);
    Tensor yhat = generator_forward(gen, x);
    CHECK(yhat.shape() == std::vector<int>{3, 3});
    CHECK(same_bits(yhat, generator_forward(gen, x)));

    Tensor hist = filled_input({3, 3, 2}, 8);
    double s1 = discriminator_forward(dis, hist, yhat);
    CHECK(s1 >= 0.0);
    CHECK(s1 <= 1.0);
    CHECK(s1 == discriminator_forward(dis, hist, yhat));

    Tensor y3({3, 3, 1});
    std::memcpy(y3.data(), yhat.data(), size_t(yhat.size()) * sizeof(double));
    CHECK(s1 == discriminator_forward(dis, hist, y3));

    CHECK_THROWS_AS(generator_forward(gen, filled_input({2, 3, 3, 2}, 9)), DimensionError);
    CHECK_THROWS_AS(discriminator_forward(dis, hist, filled_input({2, 3}, 10)), DimensionError);
}

TEST_CASE("dropout masks replay per sample") {
    ModelConfig cfg = tiny_config();
    Rng rng(31);
    Discriminator dis = build_discriminator(cfg, rng);
    Tensor batch = filled_input({3, 3, 3, 3}, 11);

    // Same stream key, same result.
    auto run_batch = [&](uint64_t seed) {
        Graph g;
        DropoutCtx drop{true, seed, 0, 0};
        VarId s = dis.forward(g, g.input(batch), false, false, &drop);
        return g.val(s);
    };
    Tensor sa = run_batch(99);
    Tensor sb = run_batch(99);
    Tensor sc = run_batch(100);
    CHECK(same_bits(sa, sb));
    CHECK(!same_bits(sa, sc));

    // Row s of the batched pass equals a single-sample pass keyed to s.
    for (int s = 0; s < 3; ++s) {
        Tensor one({3, 3, 3});
        std::memcpy(one.data(), batch.data() + int64_t(s) * one.size(),
                    size_t(one.size()) * sizeof(double));
        Graph g;
        DropoutCtx drop{true, 99, s, 0};
        VarId out = dis.forward(g, g.input(one), false, false, &drop);
        CHECK(g.val(out).data()[0] == sa.data()[s]);
    }

    // Inference path ignores a null ctx and keeps dropout off.
    Graph g;
    VarId off1 = dis.forward(g, g.input(batch), false, false, nullptr);
    DropoutCtx inactive{false, 99, 0, 0};
    VarId off2 = dis.forward(g, g.input(batch), false, false, &inactive);
    CHECK(same_bits(g.val(off1), g.val(off2)));
}

TEST_CASE("training forward updates batch-norm running stats only when asked") {
    ModelConfig cfg = tiny_config();
    Rng rng(41);
    Generator gen = build_generator(cfg, rng);
    Tensor x = filled_input({4, 3, 3, 2}, 12);

    Tensor before = gen.l1.bn.running_mean;
    {
        Graph g;
        gen.forward(g, g.input(x), true, false);
    }
    CHECK(same_bits(before, gen.l1.bn.running_mean));
    {
        Graph g;
        gen.forward(g, g.input(x), true, true);
    }
    CHECK(!same_bits(before, gen.l1.bn.running_mean));
}

TEST_CASE("generator gradients match finite differences") {
    ModelConfig cfg = tiny_config();
    Rng rng(51);
    Generator gen = build_generator(cfg, rng);
    Tensor x = filled_input({2, 3, 3, 2}, 13);
    Tensor target = filled_input({2, 3, 3, 1}, 14);

    auto build = [&](Graph& g) {
        VarId y = gen.forward(g, g.input(x), true, false);
        return g.sum(g.powi(g.sub(y, g.input(target)), 2));
    };
    auto res = testing::grad_check_multi(build, gen.params(), {1e-4, 1e-5, 1e-7});
    CHECK(res.checked > 150);
    CHECK(res.max_err < 1e-4);
}

TEST_CASE("discriminator gradients match finite differences") {
    ModelConfig cfg = tiny_config();
    Rng rng(61);
    Discriminator dis = build_discriminator(cfg, rng);
    Tensor x = filled_input({2, 3, 3, 3}, 15);

    SUBCASE("training mode with fixed dropout masks") {
        auto build = [&](Graph& g) {
            DropoutCtx drop{true, 7, 0, 0};
            VarId s = dis.forward(g, g.input(x), true, false, &drop);
            return g.sum(g.powi(s, 2));
        };
        auto res = testing::grad_check_multi(build, dis.params(), {1e-4, 1e-5, 1e-7});
        CHECK(res.checked > 150);
        CHECK(res.max_err < 1e-4);
    }
    SUBCASE("inference mode through running stats") {
        auto build = [&](Graph& g) {
            VarId s = dis.forward(g, g.input(x), false, false, nullptr);
            return g.sum(g.powi(s, 2));
        };
        auto res = testing::grad_check_multi(build, dis.params(), {1e-4, 1e-5, 1e-7});
        CHECK(res.max_err < 1e-4);
    }
}

TEST_CASE("adversarial losses differentiate through both networks") {
    ModelConfig cfg = tiny_config();
    Rng rng(71);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);
    // Batch of two: a train-mode batch of one would pin every normalized
    // activation to exactly beta, parking the leaky-relu inputs on the kink
    // where the loss has one-sided derivatives no difference step can match.
    Tensor hist = filled_input({2, 3, 3, 2}, 16);
    Tensor truth = filled_input({2, 3, 3}, 17);

    auto build = [&](Graph& g) {
        VarId x = g.input(hist);
        VarId y = gen.forward(g, x, true, false);
        VarId pair = g.concat_channels(x, y);
        VarId score = dis.forward(g, pair, true, false, nullptr);
        LossWeights w;
        VarId flat = g.squeeze_last(y);
        VarId t = g.input(truth);
        return g_total_node(g, g_adv_node(g, score), lp_node(g, flat, t, w.p),
                            gdl_node(g, flat, t), w);
    };
    std::vector<Param*> both = gen.params();
    for (Param* p : dis.params()) both.push_back(p);
    auto res = testing::grad_check_multi(build, both, {1e-4, 1e-5, 1e-7});
    CHECK(res.max_err < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
    TempDir tmp;
    ModelConfig cfg = tiny_config();
    Rng rng(81);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);

    // Perturb running stats so the saved state is not the initializer.
    {
        Graph g;
        gen.forward(g, g.input(filled_input({4, 3, 3, 2}, 18)), true, true);
        dis.forward(g, g.input(filled_input({4, 3, 3, 3}, 19)), true, true, nullptr);
    }

    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(path, gen, dis);
    Checkpoint ck = load_checkpoint(path);

    CHECK(ck.cfg.tag == cfg.tag);
    CHECK(ck.cfg.g_maps == cfg.g_maps);

    auto pg = gen.params();
    auto pg2 = ck.g.params();
    REQUIRE(pg.size() == pg2.size());
    for (size_t i = 0; i < pg.size(); ++i) {
        CHECK(pg2[i]->name == pg[i]->name);
        CHECK(same_bits(pg2[i]->value, pg[i]->value));
    }
    auto bd = dis.bn_states();
    auto bd2 = ck.d.bn_states();
    for (size_t i = 0; i < bd.size(); ++i) {
        CHECK(same_bits(bd2[i]->running_mean, bd[i]->running_mean));
        CHECK(same_bits(bd2[i]->running_var, bd[i]->running_var));
    }

    Tensor x = filled_input({3, 3, 2}, 20);
    CHECK(same_bits(generator_forward(gen, x), generator_forward(ck.g, x)));

    // Saving the loaded copy reproduces the file byte for byte.
    const std::string path2 = tmp.file("model2.ckpt");
    save_checkpoint(path2, ck.g, ck.d);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("checkpoint loader rejects damaged files") {
    TempDir tmp;
    ModelConfig cfg = tiny_config();
    Rng rng(91);
    Generator gen = build_generator(cfg, rng);
    Discriminator dis = build_discriminator(cfg, rng);
    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(path, gen, dis);

    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), IngestError);

    {
        std::ofstream os(tmp.file("bad_magic.ckpt"), std::ios::binary);
        os << "NOPE bytes";
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad_magic.ckpt")), IngestError);

    {
        std::ifstream is(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(tmp.file("truncated.ckpt"), std::ios::binary);
        os.write(all.data(), std::streamsize(all.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("truncated.ckpt")), IngestError);

    {
        std::ifstream is(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        all.push_back('x');
        std::ofstream os(tmp.file("trailing.ckpt"), std::ios::binary);
        os.write(all.data(), std::streamsize(all.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("trailing.ckpt")), IngestError);
}
