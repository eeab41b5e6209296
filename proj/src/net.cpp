#include "echorange/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "echorange/errors.hpp"
#include "echorange/hash.hpp"

namespace echorange::net {

void CRNNConfig::validate() const {
    if (conv_blocks.empty()) throw ConfigError("CRNNConfig: need at least one conv block");
    int f = input_bins;
    for (const auto& b : conv_blocks) {
        if (b.out_channels < 1) throw ConfigError("CRNNConfig: out_channels must be >= 1");
        if (b.freq_pool < 1 || f % b.freq_pool != 0)
            throw ConfigError("CRNNConfig: freq pools must divide the frequency axis exactly");
        f /= b.freq_pool;
    }
    if (recurrent_hidden < 1) throw ConfigError("CRNNConfig: recurrent_hidden must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("CRNNConfig: dropout_rate must be in [0, 1)");
    if (input_maps < 1 || input_bins < 1) throw ConfigError("CRNNConfig: bad input geometry");
}

std::uint64_t CRNNConfig::digest() const {
    char buf[64];
    std::string canon = "v1;maps=" + std::to_string(input_maps) +
                        ";bins=" + std::to_string(input_bins) + ";blocks=";
    for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
        if (i) canon += ',';
        canon += std::to_string(conv_blocks[i].out_channels) + "p" +
                 std::to_string(conv_blocks[i].freq_pool);
    }
    canon += ";hidden=" + std::to_string(recurrent_hidden);
    std::snprintf(buf, sizeof(buf), ";dropout=%g", dropout_rate);
    canon += buf;
    return fnv1a64(canon);
}

namespace {

Tensor uniform_tensor(Rng& rng, std::vector<int> shape, double bound) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

CRNNParams CRNNParams::init(const CRNNConfig& config, std::uint64_t seed) {
    config.validate();
    CRNNParams p;
    p.config_ = config;
    Rng rng(seed);

    int in_ch = config.input_maps;
    for (std::size_t i = 0; i < config.conv_blocks.size(); ++i) {
        const int out_ch = config.conv_blocks[i].out_channels;
        const double bound = std::sqrt(6.0 / (in_ch * 9.0));  // Kaiming uniform, fan-in
        const std::string prefix = "conv" + std::to_string(i);
        p.entries_.emplace_back(prefix + ".w",
                                uniform_tensor(rng, {out_ch, in_ch, 3, 3}, bound));
        p.entries_.emplace_back(prefix + ".b", Tensor({out_ch}));
        in_ch = out_ch;
    }

    const int H = config.recurrent_hidden;
    const int D = config.gru_input_width();
    const double rb = 1.0 / std::sqrt(static_cast<double>(H));
    for (const char* gate : {"z", "r", "n"})
        p.entries_.emplace_back(std::string("gru.w") + gate, uniform_tensor(rng, {H, D}, rb));
    for (const char* gate : {"z", "r", "n"})
        p.entries_.emplace_back(std::string("gru.u") + gate, uniform_tensor(rng, {H, H}, rb));
    for (const char* gate : {"z", "r", "n"})
        p.entries_.emplace_back(std::string("gru.b") + gate, uniform_tensor(rng, {H}, rb));

    const double hb = std::sqrt(6.0 / static_cast<double>(H));
    p.entries_.emplace_back("head_d.w", uniform_tensor(rng, {1, H}, hb));
    p.entries_.emplace_back("head_d.b", Tensor({1}));
    p.entries_.emplace_back("head_y.w", uniform_tensor(rng, {1, H}, hb));
    p.entries_.emplace_back("head_y.b", Tensor({1}));
    return p;
}

Tensor& CRNNParams::tensor(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw StateError("CRNNParams: unknown parameter " + name);
}

const Tensor& CRNNParams::tensor(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw StateError("CRNNParams: unknown parameter " + name);
}

bool CRNNParams::has(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

CRNNGraph build_crnn_graph(const CRNNParams& params, const feat::FeatureTensor& features,
                           Rng* dropout_rng) {
    const auto& cfg = params.config();
    if (static_cast<int>(features.bins) != cfg.input_bins ||
        features.data.size() !=
            static_cast<std::size_t>(cfg.input_maps) * features.frames * features.bins)
        throw ShapeError("crnn_forward: feature tensor does not match the config geometry");
    const int T = static_cast<int>(features.frames);

    CRNNGraph g;
    auto leaf_of = [&](const std::string& name) {
        auto node = g.tape.leaf(params.tensor(name), true, name);
        g.params.emplace_back(name, node);
        return node;
    };

    Tensor input({cfg.input_maps, T, cfg.input_bins});
    std::copy(features.data.begin(), features.data.end(), input.values().begin());
    NodePtr x = g.tape.leaf(std::move(input), false);

    for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
        const std::string prefix = "conv" + std::to_string(i);
        auto w = leaf_of(prefix + ".w");
        auto b = leaf_of(prefix + ".b");
        x = g.tape.conv2d(x, w, b);
        x = g.tape.relu(x);
        x = g.tape.freq_max_pool(x, cfg.conv_blocks[i].freq_pool);
    }
    x = g.tape.flatten_freq(x);

    Tape::GruWeights gw{leaf_of("gru.wz"), leaf_of("gru.wr"), leaf_of("gru.wn"),
                        leaf_of("gru.uz"), leaf_of("gru.ur"), leaf_of("gru.un"),
                        leaf_of("gru.bz"), leaf_of("gru.br"), leaf_of("gru.bn")};
    x = g.tape.gru(x, gw);

    if (cfg.dropout_rate > 0.0 && dropout_rng) {
        // Inverted dropout on the recurrent features; inference leaves it off.
        Tensor mask(x->value.shape());
        const double keep = 1.0 - cfg.dropout_rate;
        for (std::size_t i = 0; i < mask.size(); ++i)
            mask[i] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        x = g.tape.mul(x, g.tape.leaf(std::move(mask), false));
    }

    // sequenced statements: leaf registration order must match the registry
    auto dw = leaf_of("head_d.w");
    auto db = leaf_of("head_d.b");
    g.d_hat = g.tape.sigmoid(g.tape.affine(x, dw, db));
    auto yw = leaf_of("head_y.w");
    auto yb = leaf_of("head_y.b");
    g.y_hat = g.tape.softplus(g.tape.affine(x, yw, yb));
    return g;
}

NetOutput crnn_forward(const CRNNParams& params, const feat::FeatureTensor& features) {
    auto g = build_crnn_graph(params, features);
    const int T = g.d_hat->value.dim(0);
    NetOutput out;
    out.d_hat.resize(T);
    out.y_hat.resize(T);
    for (int t = 0; t < T; ++t) {
        out.d_hat[t] = g.d_hat->value.at(t, 0);
        out.y_hat[t] = g.y_hat->value.at(t, 0);
    }
    return out;
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace

void save_checkpoint(const CRNNParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot write " + path.string());
    out.write("ERCK", 4);
    write_u32(out, kCheckpointVersion);
    write_u64(out, params.config().digest());
    write_u32(out, static_cast<std::uint32_t>(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& name = params.name(i);
        const auto& t = params.tensor(i);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        std::vector<float> buf(t.size());
        for (std::size_t j = 0; j < buf.size(); ++j) buf[j] = static_cast<float>(t[j]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

CRNNParams load_checkpoint(const std::filesystem::path& path, const CRNNConfig& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ERCK", 4) != 0)
        throw FormatError("load_checkpoint: bad magic in " + path.string());
    if (read_u32(in) != kCheckpointVersion)
        throw UnsupportedError("load_checkpoint: unsupported version");
    const std::uint64_t digest = read_u64(in);
    if (digest != expected.digest())
        throw IncompatibleError("load_checkpoint: config digest mismatch");

    CRNNParams params = CRNNParams::init(expected, 0);
    const std::uint32_t count = read_u32(in);
    if (count != params.count())
        throw IncompatibleError("load_checkpoint: parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t ndims = read_u32(in);
        std::vector<int> shape(ndims);
        for (auto& d : shape) d = static_cast<int>(read_u32(in));
        if (!params.has(name)) throw IncompatibleError("load_checkpoint: unknown parameter " + name);
        Tensor& t = params.tensor(name);
        if (t.shape() != shape)
            throw IncompatibleError("load_checkpoint: shape mismatch for " + name);
        std::vector<float> buf(t.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw CorruptFileError("load_checkpoint: truncated file " + path.string());
        for (std::size_t j = 0; j < buf.size(); ++j) t[j] = buf[j];
    }
    return params;
}

}  // namespace echorange::net
