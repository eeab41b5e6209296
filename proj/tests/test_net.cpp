#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "echorange/autograd.hpp"
#include "echorange/errors.hpp"
#include "echorange/net.hpp"
#include "echorange/rng.hpp"

#include "oracles.hpp"

using namespace echorange;
using net::Tensor;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double amp = 0.5) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-amp, amp);
    return t;
}

feat::FeatureTensor random_features(Rng& rng, int maps, std::size_t frames, std::size_t bins) {
    feat::FeatureTensor f;
    f.frames = frames;
    f.bins = bins;
    f.data.resize(static_cast<std::size_t>(maps) * frames * bins);
    for (auto& v : f.data) v = rng.uniform(-1.0, 1.0);
    return f;
}

net::CRNNConfig tiny_config() {
    net::CRNNConfig cfg;
    cfg.conv_blocks = {{6, 4}, {6, 4}, {6, 2}};
    cfg.recurrent_hidden = 10;
    return cfg;
}

}  // namespace

TEST_CASE("conv2d with an identity kernel reproduces the matched input channel") {
    net::Tape tape;
    Rng rng(1);
    auto x = tape.leaf(random_tensor(rng, {2, 5, 6}));
    Tensor w({2, 2, 3, 3});
    w.at(0, 0, 1, 1) = 1.0;  // out0 = in0
    w.at(1, 1, 1, 1) = 1.0;  // out1 = in1
    auto out = tape.conv2d(tape.leaf(x->value), tape.leaf(std::move(w)), tape.leaf(Tensor({2})));
    for (std::size_t i = 0; i < x->value.size(); ++i)
        CHECK(out->value[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("conv2d all-ones kernel on constant input sums the 3x3 neighbourhood") {
    net::Tape tape;
    const double c = 0.7;
    Tensor x({3, 6, 7});
    x.fill(c);
    Tensor w({1, 3, 3, 3});
    w.fill(1.0);
    auto out = tape.conv2d(tape.leaf(std::move(x)), tape.leaf(std::move(w)),
                           tape.leaf(Tensor({1})));
    // interior cell: 9 taps x 3 input channels x c
    CHECK(out->value.at(0, 3, 3) == doctest::Approx(9.0 * 3.0 * c));
    // corner cell: only 4 taps contribute per channel
    CHECK(out->value.at(0, 0, 0) == doctest::Approx(4.0 * 3.0 * c));
}

TEST_CASE("conv2d matches the naive six-loop oracle") {
    Rng rng(7);
    const int cin = 2, T = 5, F = 6, cout = 3;
    const auto x = random_tensor(rng, {cin, T, F});
    const auto w = random_tensor(rng, {cout, cin, 3, 3});
    const auto b = random_tensor(rng, {cout});
    net::Tape tape;
    auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b));
    const auto ref = oracles::naive_conv2d(x.values(), cin, T, F, w.values(), cout, b.values());
    REQUIRE(out->value.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(out->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("gru at the origin stays at the origin") {
    const int T = 4, D = 3, H = 5;
    net::Tape tape;
    net::Tape::GruWeights w{
        tape.leaf(Tensor({H, D}), true), tape.leaf(Tensor({H, D}), true),
        tape.leaf(Tensor({H, D}), true), tape.leaf(Tensor({H, H}), true),
        tape.leaf(Tensor({H, H}), true), tape.leaf(Tensor({H, H}), true),
        tape.leaf(Tensor({H}), true),    tape.leaf(Tensor({H}), true),
        tape.leaf(Tensor({H}), true)};
    auto out = tape.gru(tape.leaf(Tensor({T, D})), w);
    for (std::size_t i = 0; i < out->value.size(); ++i) CHECK(out->value[i] == 0.0);
}

TEST_CASE("gru single step equals the hand-computed cell update") {
    const int D = 2, H = 2;
    Rng rng(17);
    net::Tape tape;
    const auto wz = random_tensor(rng, {H, D}), wr = random_tensor(rng, {H, D}),
               wn = random_tensor(rng, {H, D});
    const auto uz = random_tensor(rng, {H, H}), ur = random_tensor(rng, {H, H}),
               un = random_tensor(rng, {H, H});
    const auto bz = random_tensor(rng, {H}), br = random_tensor(rng, {H}),
               bn = random_tensor(rng, {H});
    const auto x = random_tensor(rng, {1, D});

    net::Tape::GruWeights w{tape.leaf(wz), tape.leaf(wr), tape.leaf(wn),
                            tape.leaf(uz), tape.leaf(ur), tape.leaf(un),
                            tape.leaf(bz), tape.leaf(br), tape.leaf(bn)};
    auto out = tape.gru(tape.leaf(x), w);

    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int i = 0; i < H; ++i) {
        // h0 = 0, so the U terms vanish
        const double az = wz.at(i, 0) * x.at(0, 0) + wz.at(i, 1) * x.at(0, 1) + bz[i];
        const double an = wn.at(i, 0) * x.at(0, 0) + wn.at(i, 1) * x.at(0, 1) + bn[i];
        const double z = sigmoid(az);
        const double expected = z * std::tanh(an);  // (1-z)*0 + z*n
        CHECK(out->value.at(0, i) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("gru hidden values stay inside (-1, 1)") {
    Rng rng(23);
    const int T = 20, D = 4, H = 6;
    net::Tape tape;
    net::Tape::GruWeights w{
        tape.leaf(random_tensor(rng, {H, D}, 2.0)), tape.leaf(random_tensor(rng, {H, D}, 2.0)),
        tape.leaf(random_tensor(rng, {H, D}, 2.0)), tape.leaf(random_tensor(rng, {H, H}, 2.0)),
        tape.leaf(random_tensor(rng, {H, H}, 2.0)), tape.leaf(random_tensor(rng, {H, H}, 2.0)),
        tape.leaf(random_tensor(rng, {H}, 2.0)),    tape.leaf(random_tensor(rng, {H}, 2.0)),
        tape.leaf(random_tensor(rng, {H}, 2.0))};
    auto out = tape.gru(tape.leaf(random_tensor(rng, {T, D}, 3.0)), w);
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        CHECK(out->value[i] > -1.0);
        CHECK(out->value[i] < 1.0);
    }
}

TEST_CASE("crnn forward: activation ranges and frame preservation") {
    const auto cfg = tiny_config();
    const auto params = net::CRNNParams::init(cfg, 99);
    Rng rng(3);
    const auto feats = random_features(rng, cfg.input_maps, 17, 64);
    const auto out = net::crnn_forward(params, feats);
    REQUIRE(out.d_hat.size() == 17);
    REQUIRE(out.y_hat.size() == 17);
    for (double v : out.d_hat) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (double v : out.y_hat) CHECK(v > 0.0);
}

TEST_CASE("crnn forward is deterministic") {
    const auto cfg = tiny_config();
    const auto params = net::CRNNParams::init(cfg, 5);
    Rng rng(4);
    const auto feats = random_features(rng, cfg.input_maps, 9, 64);
    const auto a = net::crnn_forward(params, feats);
    const auto b = net::crnn_forward(params, feats);
    for (std::size_t i = 0; i < a.d_hat.size(); ++i) {
        CHECK(a.d_hat[i] == b.d_hat[i]);
        CHECK(a.y_hat[i] == b.y_hat[i]);
    }
}

TEST_CASE("crnn forward equals a straight-line composition of the layer ops") {
    net::CRNNConfig cfg;
    cfg.conv_blocks = {{4, 64}};  // one block pooling 64 -> 1
    cfg.recurrent_hidden = 8;
    const auto params = net::CRNNParams::init(cfg, 12);
    Rng rng(13);
    const auto feats = random_features(rng, cfg.input_maps, 10, 64);
    const auto out = net::crnn_forward(params, feats);

    // same computation, spelled out op by op on a fresh tape
    net::Tape tape;
    Tensor input({cfg.input_maps, 10, 64});
    std::copy(feats.data.begin(), feats.data.end(), input.values().begin());
    auto x = tape.leaf(std::move(input));
    x = tape.conv2d(x, tape.leaf(params.tensor("conv0.w")), tape.leaf(params.tensor("conv0.b")));
    x = tape.relu(x);
    x = tape.freq_max_pool(x, 64);
    x = tape.flatten_freq(x);
    net::Tape::GruWeights gw{
        tape.leaf(params.tensor("gru.wz")), tape.leaf(params.tensor("gru.wr")),
        tape.leaf(params.tensor("gru.wn")), tape.leaf(params.tensor("gru.uz")),
        tape.leaf(params.tensor("gru.ur")), tape.leaf(params.tensor("gru.un")),
        tape.leaf(params.tensor("gru.bz")), tape.leaf(params.tensor("gru.br")),
        tape.leaf(params.tensor("gru.bn"))};
    x = tape.gru(x, gw);
    auto d_hat = tape.sigmoid(
        tape.affine(x, tape.leaf(params.tensor("head_d.w")), tape.leaf(params.tensor("head_d.b"))));
    auto y_hat = tape.softplus(
        tape.affine(x, tape.leaf(params.tensor("head_y.w")), tape.leaf(params.tensor("head_y.b"))));

    for (int t = 0; t < 10; ++t) {
        CHECK(out.d_hat[t] == doctest::Approx(d_hat->value.at(t, 0)).epsilon(1e-15));
        CHECK(out.y_hat[t] == doctest::Approx(y_hat->value.at(t, 0)).epsilon(1e-15));
    }
}

TEST_CASE("backward on a sum of one parameter: all-ones gradient, others zero") {
    net::Tape tape;
    Rng rng(33);
    auto p1 = tape.leaf(random_tensor(rng, {3, 4}), true, "p1");
    auto p2 = tape.leaf(random_tensor(rng, {2, 2}), true, "p2");
    auto loss = tape.sum(p1);
    tape.backward(loss);
    REQUIRE(p1->grad.size() == p1->value.size());
    for (std::size_t i = 0; i < p1->grad.size(); ++i) CHECK(p1->grad[i] == 1.0);
    CHECK(p2->grad.size() == 0);  // never touched
}

TEST_CASE("backward of a zero-scaled loss gives zero gradients") {
    net::Tape tape;
    Rng rng(34);
    auto p = tape.leaf(random_tensor(rng, {5}), true, "p");
    auto loss = tape.scale(tape.sum(p), 0.0);
    tape.backward(loss);
    for (std::size_t i = 0; i < p->grad.size(); ++i) CHECK(p->grad[i] == 0.0);
}

TEST_CASE("backward without a recorded forward raises a state error") {
    net::Tape tape;
    auto lonely = net::make_leaf(Tensor::scalar(1.0), true);
    CHECK_THROWS_AS(tape.backward(lonely), StateError);
}

namespace {

// Builds the full model + masked loss for one window and returns the loss
// value; used for central finite differences.
double loss_value(const net::CRNNParams& params, const feat::FeatureTensor& feats,
                  const std::vector<double>& y, const std::vector<std::uint8_t>& d,
                  const loss::RegressorKind& kind) {
    auto graph = net::build_crnn_graph(params, feats);
    auto terms = graph.tape.eq1_terms(graph.y_hat, graph.d_hat, y, d, kind, true);
    return terms->value[0] / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("full CRNN gradient check against central finite differences") {
    const auto cfg = tiny_config();
    auto params = net::CRNNParams::init(cfg, 2025);
    Rng rng(2026);
    const int T = 12;
    const auto feats = random_features(rng, cfg.input_maps, T, 64);
    std::vector<double> y(T);
    std::vector<std::uint8_t> d(T);
    for (int t = 0; t < T; ++t) {
        d[t] = rng.uniform() < 0.6 ? 1 : 0;
        y[t] = d[t] ? rng.uniform(0.5, 4.0) : 0.0;
    }

    const loss::RegressorKind kinds[] = {
        loss::RegressorKind::parse("ae"), loss::RegressorKind::parse("se"),
        loss::RegressorKind::parse("ape"), loss::RegressorKind::parse("spe"),
        loss::RegressorKind::parse("tape:0.1")};

    for (const auto& kind : kinds) {
        // analytic gradients
        auto graph = net::build_crnn_graph(params, feats);
        auto terms = graph.tape.eq1_terms(graph.y_hat, graph.d_hat, y, d, kind, true);
        auto scaled = graph.tape.scale(terms, 1.0 / T);
        graph.tape.backward(scaled);

        Rng coord_rng(31337);
        int checked = 0;
        for (auto& [name, node] : graph.params) {
            REQUIRE(node->value.size() > 0);
            const bool has_grad = node->grad.size() == node->value.size();
            for (int pick = 0; pick < 4; ++pick) {
                const std::size_t k = coord_rng.uniform_index(node->value.size());
                const double analytic = has_grad ? node->grad[k] : 0.0;
                const double h = 1e-5;
                net::Tensor& tensor = params.tensor(name);
                const double saved = tensor[k];
                tensor[k] = saved + h;
                const double up = loss_value(params, feats, y, d, kind);
                tensor[k] = saved - h;
                const double down = loss_value(params, feats, y, d, kind);
                tensor[k] = saved;
                const double fd = (up - down) / (2.0 * h);
                if (std::abs(analytic) > 1e-8) {
                    const double rel =
                        std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
                    CHECK(rel < 1e-4);
                    ++checked;
                }
            }
        }
        CHECK(checked > 10);  // the check must actually bite
    }
}

TEST_CASE("batch order permutation leaves per-item outputs identical") {
    const auto cfg = tiny_config();
    const auto params = net::CRNNParams::init(cfg, 8);
    Rng rng(9);
    std::vector<feat::FeatureTensor> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_features(rng, cfg.input_maps, 7, 64));
    std::vector<net::NetOutput> forward_order, reverse_order(4);
    for (int i = 0; i < 4; ++i) forward_order.push_back(net::crnn_forward(params, batch[i]));
    for (int i = 3; i >= 0; --i) reverse_order[i] = net::crnn_forward(params, batch[i]);
    for (int i = 0; i < 4; ++i)
        for (std::size_t t = 0; t < forward_order[i].d_hat.size(); ++t) {
            CHECK(forward_order[i].d_hat[t] == reverse_order[i].d_hat[t]);
            CHECK(forward_order[i].y_hat[t] == reverse_order[i].y_hat[t]);
        }
}

TEST_CASE("config validation rejects bad pools, hidden sizes and dropout") {
    net::CRNNConfig cfg;
    cfg.conv_blocks = {{8, 3}};  // 3 does not divide 64
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = net::CRNNConfig{};
    cfg.recurrent_hidden = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = net::CRNNConfig{};
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("checkpoints round-trip through float32 and validate the digest") {
    const auto cfg = tiny_config();
    const auto params = net::CRNNParams::init(cfg, 55);
    const auto path = std::filesystem::temp_directory_path() / "echorange_ckpt_test.erck";
    net::save_checkpoint(params, path);
    const auto back = net::load_checkpoint(path, cfg);
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& a = params.tensor(i);
        const auto& b = back.tensor(i);
        REQUIRE(a.shape() == b.shape());
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(b[k] == static_cast<double>(static_cast<float>(a[k])));
    }

    net::CRNNConfig other = cfg;
    other.recurrent_hidden = 12;
    CHECK_THROWS_AS(net::load_checkpoint(path, other), IncompatibleError);
}

TEST_CASE("config digest distinguishes architectures and ignores nothing silently") {
    net::CRNNConfig a, b;
    CHECK(a.digest() == b.digest());
    b.recurrent_hidden = 32;
    CHECK(a.digest() != b.digest());
    net::CRNNConfig c;
    c.conv_blocks[1].freq_pool = 2;
    c.conv_blocks[2].freq_pool = 4;  // same product, different layout
    CHECK(a.digest() != c.digest());
}
