#include "lmpforge/gan_models.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "lmpforge/errors.hpp"

#include "json.hpp"

namespace lmpforge {

using nlohmann::json;
using kernels::Pad;

std::string case_name(CaseTag tag) { return tag == CaseTag::case1 ? "case1" : "case2"; }

CaseTag case_from_name(const std::string& name) {
    if (name == "case1") return CaseTag::case1;
    if (name == "case2") return CaseTag::case2;
    throw ConfigError("unknown case tag \"" + name + "\" (want case1 or case2)");
}

ModelConfig ModelConfig::make(CaseTag tag, int rows, int cols, int history_n) {
    ModelConfig cfg;
    cfg.tag = tag;
    cfg.history_n = history_n;
    cfg.rows = rows;
    cfg.cols = cols;
    cfg.d_hist_channels = history_n;
    if (tag == CaseTag::case1) {
        cfg.g_in_channels = history_n;
        cfg.kernel_h = 3;
        cfg.kernel_w = 3;
        cfg.g_maps = {64, 256, 1024, 512, 64};
    } else {
        cfg.g_in_channels = 4 * history_n;
        cfg.kernel_h = rows;  // unpadded discriminator conv collapses the grid
        cfg.kernel_w = cols;
        cfg.g_maps = {64, 128, 256, 128, 64};
    }
    cfg.d_maps = {64, 320, 1024, 512, 256};
    cfg.validate();
    return cfg;
}

void ModelConfig::validate() const {
    auto bad = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (rows < 1 || cols < 1) bad("grid dims must be positive");
    if (history_n < 1) bad("history length must be positive");
    if (kernel_h < 1 || kernel_w < 1) bad("kernel dims must be positive");
    if (kernel_h > rows || kernel_w > cols)
        bad("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
            " exceeds grid " + std::to_string(rows) + "x" + std::to_string(cols));
    if (stride != 1) bad("stride must be 1");
    if (g_maps.size() != 5 || d_maps.size() != 5) bad("feature-map ladders must have 5 entries");
    for (int m : g_maps)
        if (m < 1) bad("generator feature maps must be positive");
    for (int m : d_maps)
        if (m < 1) bad("discriminator feature maps must be positive");
    const int expect_g = tag == CaseTag::case1 ? history_n : 4 * history_n;
    if (g_in_channels != expect_g)
        bad("generator input channels " + std::to_string(g_in_channels) + " != expected " +
            std::to_string(expect_g));
    if (d_hist_channels != history_n)
        bad("discriminator history channels " + std::to_string(d_hist_channels) +
            " != history length " + std::to_string(history_n));
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) bad("leaky slope must be in (0,1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) bad("dropout rate must be in [0,1)");
    if (!(bn_eps > 0.0)) bad("batch-norm eps must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) bad("batch-norm momentum must be in [0,1)");
    if (!(init_range > 0.0)) bad("init range must be positive");
}

namespace {

LayerSpec conv_spec(const std::string& kind, int kh, int kw, int stride, const std::string& pad,
                    int maps) {
    LayerSpec s;
    s.kind = kind;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.stride_h = stride;
    s.stride_w = stride;
    s.padding = pad;
    s.feature_maps = maps;
    return s;
}

LayerSpec plain_spec(const std::string& kind) {
    LayerSpec s;
    s.kind = kind;
    return s;
}

LayerSpec maps_spec(const std::string& kind, int maps) {
    LayerSpec s;
    s.kind = kind;
    s.feature_maps = maps;
    return s;
}

}  // namespace

std::vector<LayerSpec> generator_layer_specs(const ModelConfig& cfg) {
    std::vector<LayerSpec> out;
    auto convt_block = [&](int maps, int kh, int kw) {
        out.push_back(conv_spec("conv2d_transpose", kh, kw, cfg.stride, "same", maps));
        out.push_back(plain_spec("batch_norm"));
        out.push_back(plain_spec("relu"));
    };
    convt_block(cfg.g_maps[0], cfg.kernel_h, cfg.kernel_w);
    out.push_back(maps_spec("concat", cfg.g_maps[1]));
    convt_block(cfg.g_maps[2], cfg.kernel_h, cfg.kernel_w);
    convt_block(cfg.g_maps[3], cfg.kernel_h, cfg.kernel_w);
    convt_block(cfg.g_maps[4], cfg.kernel_h, cfg.kernel_w);
    out.push_back(conv_spec("conv2d", 1, 1, 1, "same", 1));
    out.push_back(plain_spec("tanh"));
    return out;
}

std::vector<LayerSpec> discriminator_layer_specs(const ModelConfig& cfg) {
    std::vector<LayerSpec> out;
    auto post = [&] {
        out.push_back(plain_spec("batch_norm"));
        LayerSpec lk = plain_spec("leaky_relu");
        lk.slope = cfg.leaky_slope;
        out.push_back(lk);
        LayerSpec dr = plain_spec("dropout");
        dr.rate = cfg.dropout_rate;
        out.push_back(dr);
    };
    out.push_back(conv_spec("conv2d", cfg.kernel_h, cfg.kernel_w, cfg.stride, "valid",
                            cfg.d_maps[0]));
    post();
    out.push_back(maps_spec("concat", cfg.d_maps[1]));
    for (int i = 2; i < 5; ++i) {
        out.push_back(maps_spec("dense", cfg.d_maps[i]));
        post();
    }
    out.push_back(maps_spec("dense", 1));
    out.push_back(plain_spec("sigmoid"));
    return out;
}

namespace {

bool is_convolutional(const std::string& kind) {
    return kind == "conv2d" || kind == "conv2d_transpose";
}

Tensor uniform_init(std::vector<int> shape, Rng& rng, double range) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-range, range);
    return t;
}

ConvTStack make_convt(const std::string& name, int kh, int kw, int out_ch, int in_ch, Rng& rng,
                      const ModelConfig& cfg) {
    ConvTStack s{Param(name + ".kernel", uniform_init({kh, kw, out_ch, in_ch}, rng,
                                                      cfg.init_range)),
                 Param(name + ".gamma", Tensor({out_ch})), Param(name + ".beta", Tensor({out_ch})),
                 BnState(out_ch, cfg.bn_eps, cfg.bn_momentum)};
    s.gamma.value.fill(1.0);
    return s;
}

ConvStack make_conv(const std::string& name, int kh, int kw, int in_ch, int out_ch, Rng& rng,
                    const ModelConfig& cfg) {
    ConvStack s{Param(name + ".kernel", uniform_init({kh, kw, in_ch, out_ch}, rng,
                                                     cfg.init_range)),
                Param(name + ".gamma", Tensor({out_ch})), Param(name + ".beta", Tensor({out_ch})),
                BnState(out_ch, cfg.bn_eps, cfg.bn_momentum)};
    s.gamma.value.fill(1.0);
    return s;
}

DenseStack make_dense(const std::string& name, int fin, int fout, Rng& rng,
                      const ModelConfig& cfg) {
    DenseStack s{Param(name + ".w", uniform_init({fin, fout}, rng, cfg.init_range)),
                 Param(name + ".gamma", Tensor({fout})), Param(name + ".beta", Tensor({fout})),
                 BnState(fout, cfg.bn_eps, cfg.bn_momentum)};
    s.gamma.value.fill(1.0);
    return s;
}

Projection make_proj_conv(const std::string& name, int in_ch, int out_ch, Rng& rng,
                          const ModelConfig& cfg) {
    Projection p{Param(name + ".w", uniform_init({1, 1, in_ch, out_ch}, rng, cfg.init_range)),
                 Param(name + ".b", Tensor({out_ch}))};
    return p;
}

Projection make_proj_dense(const std::string& name, int fin, int fout, Rng& rng,
                           const ModelConfig& cfg) {
    Projection p{Param(name + ".w", uniform_init({fin, fout}, rng, cfg.init_range)),
                 Param(name + ".b", Tensor({fout}))};
    return p;
}

}  // namespace

Generator build_generator(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int kh = cfg.kernel_h, kw = cfg.kernel_w;
    Generator g{cfg,
                make_convt("G.l1", kh, kw, cfg.g_maps[0], cfg.g_in_channels, rng, cfg),
                make_proj_conv("G.skip", cfg.g_maps[0] + cfg.g_in_channels, cfg.g_maps[1], rng,
                               cfg),
                make_convt("G.l2", kh, kw, cfg.g_maps[2], cfg.g_maps[1], rng, cfg),
                make_convt("G.l3", kh, kw, cfg.g_maps[3], cfg.g_maps[2], rng, cfg),
                make_convt("G.l4", kh, kw, cfg.g_maps[4], cfg.g_maps[3], rng, cfg),
                make_proj_conv("G.out", cfg.g_maps[4], 1, rng, cfg)};
    return g;
}

Discriminator build_discriminator(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int oh = (cfg.rows - cfg.kernel_h) / cfg.stride + 1;
    const int ow = (cfg.cols - cfg.kernel_w) / cfg.stride + 1;
    const int flat = cfg.d_maps[0] * oh * ow + cfg.rows * cfg.cols * cfg.d_in_channels();
    Discriminator d{cfg,
                    make_conv("D.l1", cfg.kernel_h, cfg.kernel_w, cfg.d_in_channels(),
                              cfg.d_maps[0], rng, cfg),
                    make_proj_dense("D.proj", flat, cfg.d_maps[1], rng, cfg),
                    make_dense("D.d1", cfg.d_maps[1], cfg.d_maps[2], rng, cfg),
                    make_dense("D.d2", cfg.d_maps[2], cfg.d_maps[3], rng, cfg),
                    make_dense("D.d3", cfg.d_maps[3], cfg.d_maps[4], rng, cfg),
                    make_proj_dense("D.out", cfg.d_maps[4], 1, rng, cfg)};
    return d;
}

namespace {

void check_spatial_input(const Tensor& x, const ModelConfig& cfg, int channels,
                         const char* who) {
    const bool batched = x.rank() == 4;
    require(x.rank() == 3 || batched,
            std::string(who) + ": input must be rank 3 or 4, got " + x.shape_str());
    const int h = x.dim(batched ? 1 : 0), w = x.dim(batched ? 2 : 1), c = x.dim(batched ? 3 : 2);
    require(h == cfg.rows && w == cfg.cols && c == channels,
            std::string(who) + ": input " + x.shape_str() + " does not match configured (" +
                std::to_string(cfg.rows) + "," + std::to_string(cfg.cols) + "," +
                std::to_string(channels) + ")");
}

}  // namespace

VarId Generator::forward(Graph& g, VarId x, bool training, bool update_running) {
    check_spatial_input(g.val(x), cfg, cfg.g_in_channels, "generator");
    auto block = [&](ConvTStack& s, VarId in) {
        VarId h = g.conv2d_transpose(in, g.param(s.kernel), cfg.stride, cfg.stride, Pad::same);
        h = g.batch_norm(h, g.param(s.gamma), g.param(s.beta), s.bn, training, update_running);
        return g.relu(h);
    };
    VarId h = block(l1, x);
    VarId cat = g.concat_channels(h, x);
    VarId p = g.channel_bias(g.conv2d(cat, g.param(skip.w), 1, 1, Pad::same), g.param(skip.b));
    h = block(l2, p);
    h = block(l3, h);
    h = block(l4, h);
    VarId y = g.channel_bias(g.conv2d(h, g.param(out.w), 1, 1, Pad::same), g.param(out.b));
    return g.tanh_op(y);
}

namespace {

/// Keyed per-sample dropout mask; batch row s of a batched pass and a later
/// batch-of-one pass with sample_base = s produce identical masks. The
/// activation always carries a leading batch axis here.
Tensor draw_dropout_mask(const Tensor& act, double rate, const DropoutCtx& ctx) {
    Tensor mask(act.shape());
    const int m = act.dim(0);
    const int64_t per = act.size() / m;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (int s = 0; s < m; ++s) {
        Rng rng(mix64(ctx.seed, uint64_t(ctx.call), uint64_t(ctx.sample_base + s)));
        double* slot = mask.data() + int64_t(s) * per;
        for (int64_t i = 0; i < per; ++i) slot[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    return mask;
}

}  // namespace

VarId Discriminator::forward(Graph& g, VarId x, bool training, bool update_running,
                             DropoutCtx* drop) {
    check_spatial_input(g.val(x), cfg, cfg.d_in_channels(), "discriminator");
    const bool batched = g.val(x).rank() == 4;
    // Promote single samples to a batch of one so the dense activations stay
    // rank 2 and batch norm sees its per-feature channel axis.
    if (!batched) x = g.reshape(x, {1, cfg.rows, cfg.cols, cfg.d_in_channels()});
    auto drop_apply = [&](VarId id) {
        if (drop == nullptr || !drop->active || cfg.dropout_rate == 0.0) return id;
        Tensor mask = draw_dropout_mask(g.val(id), cfg.dropout_rate, *drop);
        ++drop->call;
        return g.dropout_masked(id, std::move(mask));
    };
    auto post = [&](VarId id, Param& gamma, Param& beta, BnState& bn) {
        id = g.batch_norm(id, g.param(gamma), g.param(beta), bn, training, update_running);
        id = g.leaky_relu(id, cfg.leaky_slope);
        return drop_apply(id);
    };
    VarId c = g.conv2d(x, g.param(l1.kernel), cfg.stride, cfg.stride, Pad::valid);
    c = post(c, l1.gamma, l1.beta, l1.bn);
    VarId cat = g.concat_channels(g.flatten(c), g.flatten(x));
    VarId h = g.dense(cat, g.param(proj.w), g.param(proj.b));
    h = post(g.dense(h, g.param(d1.w)), d1.gamma, d1.beta, d1.bn);
    h = post(g.dense(h, g.param(d2.w)), d2.gamma, d2.beta, d2.bn);
    h = post(g.dense(h, g.param(d3.w)), d3.gamma, d3.beta, d3.bn);
    VarId score = g.sigmoid(g.dense(h, g.param(out.w), g.param(out.b)));
    return batched ? score : g.reshape(score, {1});
}

std::vector<Param*> Generator::params() {
    return {&l1.kernel, &l1.gamma, &l1.beta, &skip.w, &skip.b, &l2.kernel, &l2.gamma,
            &l2.beta,   &l3.kernel, &l3.gamma, &l3.beta, &l4.kernel, &l4.gamma, &l4.beta,
            &out.w,     &out.b};
}

std::vector<const Param*> Generator::params() const {
    return {&l1.kernel, &l1.gamma, &l1.beta, &skip.w, &skip.b, &l2.kernel, &l2.gamma,
            &l2.beta,   &l3.kernel, &l3.gamma, &l3.beta, &l4.kernel, &l4.gamma, &l4.beta,
            &out.w,     &out.b};
}

std::vector<BnState*> Generator::bn_states() { return {&l1.bn, &l2.bn, &l3.bn, &l4.bn}; }

std::vector<const BnState*> Generator::bn_states() const {
    return {&l1.bn, &l2.bn, &l3.bn, &l4.bn};
}

std::vector<Param*> Discriminator::params() {
    return {&l1.kernel, &l1.gamma, &l1.beta, &proj.w, &proj.b, &d1.w, &d1.gamma, &d1.beta,
            &d2.w,      &d2.gamma, &d2.beta, &d3.w,   &d3.gamma, &d3.beta, &out.w, &out.b};
}

std::vector<const Param*> Discriminator::params() const {
    return {&l1.kernel, &l1.gamma, &l1.beta, &proj.w, &proj.b, &d1.w, &d1.gamma, &d1.beta,
            &d2.w,      &d2.gamma, &d2.beta, &d3.w,   &d3.gamma, &d3.beta, &out.w, &out.b};
}

std::vector<BnState*> Discriminator::bn_states() { return {&l1.bn, &d1.bn, &d2.bn, &d3.bn}; }

std::vector<const BnState*> Discriminator::bn_states() const {
    return {&l1.bn, &d1.bn, &d2.bn, &d3.bn};
}

Tensor generator_forward(Generator& g, const Tensor& x) {
    require(x.rank() == 3, "generator_forward: want a single (rows,cols,channels) sample, got " +
                               x.shape_str());
    Graph graph;
    VarId y = g.forward(graph, graph.input(x), false, false);
    const Tensor& v = graph.val(y);
    Tensor out({v.dim(0), v.dim(1)});
    std::memcpy(out.data(), v.data(), size_t(v.size()) * sizeof(double));
    return out;
}

double discriminator_forward(Discriminator& d, const Tensor& x_hist, const Tensor& candidate) {
    require(x_hist.rank() == 3, "discriminator_forward: history must be rank 3, got " +
                                    x_hist.shape_str());
    const int h = x_hist.dim(0), w = x_hist.dim(1), ch = x_hist.dim(2);
    const bool flat_cand = candidate.rank() == 2;
    require(flat_cand || (candidate.rank() == 3 && candidate.dim(2) == 1),
            "discriminator_forward: candidate must be (rows,cols) or (rows,cols,1), got " +
                candidate.shape_str());
    require(candidate.dim(0) == h && candidate.dim(1) == w,
            "discriminator_forward: candidate grid " + candidate.shape_str() +
                " != history grid " + x_hist.shape_str());
    Tensor x({h, w, ch + 1});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double* src = x_hist.data() + (int64_t(i) * w + j) * ch;
            double* dst = x.data() + (int64_t(i) * w + j) * (ch + 1);
            for (int c = 0; c < ch; ++c) dst[c] = src[c];
            dst[ch] = candidate.data()[int64_t(i) * w + j];
        }
    Graph graph;
    VarId score = d.forward(graph, graph.input(x), false, false, nullptr);
    return graph.val(score).data()[0];
}

// --- checkpoint serialization ---

namespace {

json layer_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (is_convolutional(s.kind)) {
        j["kernel_h"] = s.kernel_h;
        j["kernel_w"] = s.kernel_w;
        j["stride_h"] = s.stride_h;
        j["stride_w"] = s.stride_w;
        j["padding"] = s.padding;
    }
    if (s.feature_maps > 0) j["feature_maps"] = s.feature_maps;
    if (s.kind == "dropout") j["rate"] = s.rate;
    if (s.kind == "leaky_relu") j["slope"] = s.slope;
    return j;
}

json layers_to_json(const std::vector<LayerSpec>& specs) {
    json arr = json::array();
    for (const auto& s : specs) arr.push_back(layer_to_json(s));
    return arr;
}

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["case"] = case_name(cfg.tag);
    j["history_n"] = cfg.history_n;
    j["rows"] = cfg.rows;
    j["cols"] = cfg.cols;
    j["g_in_channels"] = cfg.g_in_channels;
    j["d_hist_channels"] = cfg.d_hist_channels;
    j["kernel_h"] = cfg.kernel_h;
    j["kernel_w"] = cfg.kernel_w;
    j["stride"] = cfg.stride;
    j["g_maps"] = cfg.g_maps;
    j["d_maps"] = cfg.d_maps;
    j["leaky_slope"] = cfg.leaky_slope;
    j["dropout_rate"] = cfg.dropout_rate;
    j["bn_eps"] = cfg.bn_eps;
    j["bn_momentum"] = cfg.bn_momentum;
    j["init_range"] = cfg.init_range;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.tag = case_from_name(j.at("case").get<std::string>());
    cfg.history_n = j.at("history_n").get<int>();
    cfg.rows = j.at("rows").get<int>();
    cfg.cols = j.at("cols").get<int>();
    cfg.g_in_channels = j.at("g_in_channels").get<int>();
    cfg.d_hist_channels = j.at("d_hist_channels").get<int>();
    cfg.kernel_h = j.at("kernel_h").get<int>();
    cfg.kernel_w = j.at("kernel_w").get<int>();
    cfg.stride = j.at("stride").get<int>();
    cfg.g_maps = j.at("g_maps").get<std::vector<int>>();
    cfg.d_maps = j.at("d_maps").get<std::vector<int>>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.bn_eps = j.at("bn_eps").get<double>();
    cfg.bn_momentum = j.at("bn_momentum").get<double>();
    cfg.init_range = j.at("init_range").get<double>();
    cfg.validate();
    return cfg;
}

constexpr char kMagic[4] = {'L', 'M', 'P', 'F'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, uint32_t(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_u32(os, uint32_t(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(size_t(t.size()) * sizeof(double)));
}

uint32_t read_u32(std::istream& is, const std::string& path) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IngestError("checkpoint " + path + ": truncated");
    return v;
}

uint64_t read_u64(std::istream& is, const std::string& path) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IngestError("checkpoint " + path + ": truncated");
    return v;
}

void read_tensor_into(std::istream& is, Tensor& t, const std::string& name,
                      const std::string& path) {
    const uint32_t rank = read_u32(is, path);
    if (int(rank) != t.rank())
        throw IngestError("checkpoint " + path + ": " + name + " rank " + std::to_string(rank) +
                          " != expected " + std::to_string(t.rank()));
    for (int d = 0; d < t.rank(); ++d) {
        const uint32_t dim = read_u32(is, path);
        if (int(dim) != t.dim(d))
            throw IngestError("checkpoint " + path + ": " + name + " axis " + std::to_string(d) +
                              " is " + std::to_string(dim) + ", expected " +
                              std::to_string(t.dim(d)));
    }
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 std::streamsize(size_t(t.size()) * sizeof(double))))
        throw IngestError("checkpoint " + path + ": truncated in " + name);
}

template <typename Net>
void write_net(std::ostream& os, const Net& net) {
    for (const Param* p : net.params()) write_tensor(os, p->value);
    for (const BnState* bn : net.bn_states()) {
        write_tensor(os, bn->running_mean);
        write_tensor(os, bn->running_var);
    }
}

template <typename Net>
void read_net(std::istream& is, Net& net, const std::string& path) {
    for (Param* p : net.params()) read_tensor_into(is, p->value, p->name, path);
    int idx = 0;
    for (BnState* bn : net.bn_states()) {
        read_tensor_into(is, bn->running_mean, "bn" + std::to_string(idx) + ".mean", path);
        read_tensor_into(is, bn->running_var, "bn" + std::to_string(idx) + ".var", path);
        ++idx;
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Generator& g, const Discriminator& d) {
    json header;
    header["config"] = config_to_json(g.cfg);
    header["generator"] = layers_to_json(generator_layer_specs(g.cfg));
    header["discriminator"] = layers_to_json(discriminator_layer_specs(d.cfg));
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestError("checkpoint " + path + ": cannot open for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, header_str.size());
    os.write(header_str.data(), std::streamsize(header_str.size()));
    write_net(os, g);
    write_net(os, d);
    os.flush();
    if (!os) throw IngestError("checkpoint " + path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestError("checkpoint " + path + ": cannot open");
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IngestError("checkpoint " + path + ": bad magic");
    const uint32_t version = read_u32(is, path);
    if (version != kVersion)
        throw IngestError("checkpoint " + path + ": unsupported version " +
                          std::to_string(version));
    const uint64_t header_len = read_u64(is, path);
    std::string header_str(header_len, '\0');
    if (!is.read(header_str.data(), std::streamsize(header_len)))
        throw IngestError("checkpoint " + path + ": truncated header");
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw IngestError("checkpoint " + path + ": bad header: " + e.what());
    }
    ModelConfig cfg;
    try {
        cfg = config_from_json(header.at("config"));
        if (header.at("generator") != layers_to_json(generator_layer_specs(cfg)) ||
            header.at("discriminator") != layers_to_json(discriminator_layer_specs(cfg)))
            throw IngestError("checkpoint " + path +
                              ": layer specs do not match the stored config");
    } catch (const json::exception& e) {
        throw IngestError("checkpoint " + path + ": bad header: " + e.what());
    }

    Rng scratch(0);
    Checkpoint ck{cfg, build_generator(cfg, scratch), build_discriminator(cfg, scratch)};
    read_net(is, ck.g, path);
    read_net(is, ck.d, path);
    // Whole file must be consumed; trailing bytes mean a writer/reader skew.
    is.peek();
    if (!is.eof()) throw IngestError("checkpoint " + path + ": trailing bytes");
    return ck;
}

}  // namespace lmpforge
