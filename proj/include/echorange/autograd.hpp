#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "echorange/loss.hpp"
#include "echorange/tensor.hpp"

namespace echorange::net {

// One node in a recorded computation. Gradient storage is allocated on first
// use so pure inference carries no overhead.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string name;  // parameters only

    Tensor& ensure_grad() {
        if (grad.size() != value.size()) {
            grad = Tensor(value.shape());
        }
        return grad;
    }
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Tensor value, bool requires_grad = false, std::string name = "");

// Reverse-mode tape. Ops append a closure that propagates the output
// gradient into the input gradients; backward() replays them in reverse.
class Tape {
public:
    NodePtr leaf(Tensor value, bool requires_grad = false, std::string name = "");

    // y = conv2d(x, w) + b. x: [Cin x T x F], w: [Cout x Cin x 3 x 3],
    // b: [Cout], stride 1, same zero padding.
    NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b);

    NodePtr relu(const NodePtr& x);

    // Max-pool along the last (frequency) axis. x: [C x T x F] -> [C x T x F/p].
    NodePtr freq_max_pool(const NodePtr& x, int pool);

    // [C x T x F] -> [T x C*F]
    NodePtr flatten_freq(const NodePtr& x);

    struct GruWeights {
        NodePtr wz, wr, wn;  // [H x D]
        NodePtr uz, ur, un;  // [H x H]
        NodePtr bz, br, bn;  // [H]
    };

    // Gated recurrent unit over a sequence [T x D] -> [T x H], zero initial
    // state. Gates z, r sigmoid; candidate n = tanh(Wn x + Un (r . h) + bn);
    // h' = (1 - z) . h + z . n.
    NodePtr gru(const NodePtr& seq, const GruWeights& weights);

    // [T x D] x [K x D]^T + b -> [T x K]
    NodePtr affine(const NodePtr& seq, const NodePtr& w, const NodePtr& b);

    NodePtr sigmoid(const NodePtr& x);
    NodePtr softplus(const NodePtr& x);

    NodePtr add(const NodePtr& a, const NodePtr& b);
    NodePtr mul(const NodePtr& a, const NodePtr& b);  // elementwise
    NodePtr scale(const NodePtr& x, double s);
    NodePtr sum(const NodePtr& x);  // -> scalar

    // Per-item slice of Eq-1 style terms, unnormalized:
    // sum_t [ d_t * regressor(y_t, yh_t) + bce(d_t, dh_t) ].
    // y_hat, d_hat: [T x 1] column outputs of the two heads. With
    // include_regressor = false only the BCE terms contribute (detector
    // pre-training), so no gradient reaches the distance head.
    NodePtr eq1_terms(const NodePtr& y_hat, const NodePtr& d_hat, const std::vector<double>& y,
                      const std::vector<std::uint8_t>& d, const loss::RegressorKind& kind,
                      bool include_regressor = true);

    // Seeds d(loss)/d(loss) = 1 and replays the tape. Call once per forward.
    void backward(const NodePtr& loss_node);

private:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

}  // namespace echorange::net
