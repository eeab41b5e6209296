#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace echorange::loss {

// Distance regressor family:
//   AE  |y - yh|          SE  (y - yh)^2
//   APE |y - yh| / y      SPE ((y - yh) / y)^2
//   TAPE max(delta, APE)
enum class Regressor { AE, SE, APE, SPE, TAPE };

struct RegressorKind {
    Regressor variant = Regressor::AE;
    double delta = 0.0;  // TAPE only, in (0, 1]

    // Config strings: "ae", "se", "ape", "spe", "tape:<delta>".
    static RegressorKind parse(const std::string& text);
    std::string to_string() const;
    void validate() const;
};

// Pointwise regressor value; y must be positive (mask inactive frames first).
double regressor(const RegressorKind& kind, double y, double y_hat);

// d(regressor)/d(y_hat). Subgradient 0 at AE's kink and on TAPE's floor.
double regressor_grad(const RegressorKind& kind, double y, double y_hat);

// Binary cross-entropy for a single frame; d_hat strictly inside (0, 1).
double bce(double d, double d_hat);
double bce_grad(double d, double d_hat);  // d(bce)/d(d_hat)

// One batch of frame-aligned targets and predictions, all [N x T] row-major.
// y is only consulted where d = 1.
struct LossBatch {
    std::size_t n = 0;  // batch size
    std::size_t t = 0;  // frames per item
    std::vector<double> y;
    std::vector<double> y_hat;
    std::vector<std::uint8_t> d;
    std::vector<double> d_hat;

    void validate() const;
};

// L = (1/NT) sum_{n,t} [ d * regressor(y, y_hat) + bce(d, d_hat) ].
// The regressor term is never evaluated where d = 0.
double masked_loss(const LossBatch& batch, const RegressorKind& kind);

}  // namespace echorange::loss
