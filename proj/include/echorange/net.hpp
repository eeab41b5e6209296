#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "echorange/autograd.hpp"
#include "echorange/features.hpp"
#include "echorange/rng.hpp"
#include "echorange/tensor.hpp"

namespace echorange::net {

struct ConvBlockConfig {
    int out_channels = 32;
    int freq_pool = 1;  // kernel is fixed 3x3; pooling acts on frequency only
};

struct CRNNConfig {
    std::vector<ConvBlockConfig> conv_blocks = {{32, 4}, {32, 4}, {32, 2}};
    int recurrent_hidden = 64;
    double dropout_rate = 0.0;
    int input_maps = feat::kNumMaps;
    int input_bins = feat::kNumLags;

    void validate() const;
    std::uint64_t digest() const;

    int gru_input_width() const {
        int f = input_bins;
        for (const auto& b : conv_blocks) f /= b.freq_pool;
        return conv_blocks.empty() ? input_maps * f : conv_blocks.back().out_channels * f;
    }
};

// Named parameter registry with a stable order; the order pins init draws,
// checkpoint layout and optimizer state.
class CRNNParams {
public:
    static CRNNParams init(const CRNNConfig& config, std::uint64_t seed);

    const CRNNConfig& config() const { return config_; }
    std::size_t count() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor& tensor(std::size_t i) { return entries_[i].second; }
    const Tensor& tensor(std::size_t i) const { return entries_[i].second; }
    Tensor& tensor(const std::string& name);
    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;

private:
    CRNNConfig config_;
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct NetOutput {
    std::vector<double> d_hat;  // per frame, in (0, 1)
    std::vector<double> y_hat;  // per frame, meters, > 0
};

// Built forward graph: parameter leaves (registry order) plus the two head
// output nodes [T x 1]. Keep it alive until backward has run.
struct CRNNGraph {
    Tape tape;
    std::vector<std::pair<std::string, NodePtr>> params;
    NodePtr d_hat;
    NodePtr y_hat;
};

// Records the full conv -> ReLU -> freq-pool stack, GRU and both heads.
// Parameter values are copied into fresh leaves, so graphs for different
// batch items are independent (and safe to run on worker threads).
CRNNGraph build_crnn_graph(const CRNNParams& params, const feat::FeatureTensor& features,
                           Rng* dropout_rng = nullptr);

NetOutput crnn_forward(const CRNNParams& params, const feat::FeatureTensor& features);

// Versioned binary checkpoint, little-endian: "ERCK", version, config digest,
// then per-parameter name/shape/float32 data. Loading validates the digest.
void save_checkpoint(const CRNNParams& params, const std::filesystem::path& path);
CRNNParams load_checkpoint(const std::filesystem::path& path, const CRNNConfig& expected);

}  // namespace echorange::net
