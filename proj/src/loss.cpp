#include "echorange/loss.hpp"

#include <cmath>
#include <cstdio>

#include "echorange/errors.hpp"

namespace echorange::loss {

RegressorKind RegressorKind::parse(const std::string& text) {
    RegressorKind kind;
    if (text == "ae") kind.variant = Regressor::AE;
    else if (text == "se") kind.variant = Regressor::SE;
    else if (text == "ape") kind.variant = Regressor::APE;
    else if (text == "spe") kind.variant = Regressor::SPE;
    else if (text.rfind("tape:", 0) == 0) {
        kind.variant = Regressor::TAPE;
        try {
            kind.delta = std::stod(text.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("regressor: bad TAPE threshold in '" + text + "'");
        }
    } else {
        throw ConfigError("regressor: unknown kind '" + text + "'");
    }
    kind.validate();
    return kind;
}

std::string RegressorKind::to_string() const {
    switch (variant) {
        case Regressor::AE: return "ae";
        case Regressor::SE: return "se";
        case Regressor::APE: return "ape";
        case Regressor::SPE: return "spe";
        case Regressor::TAPE: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "tape:%g", delta);
            return buf;
        }
    }
    return "ae";
}

void RegressorKind::validate() const {
    if (variant == Regressor::TAPE) {
        if (!(delta > 0.0 && delta <= 1.0))
            throw ConfigError("regressor: TAPE delta must be in (0, 1]");
    } else if (delta != 0.0) {
        throw ConfigError("regressor: delta is only meaningful for TAPE");
    }
}

double regressor(const RegressorKind& kind, double y, double y_hat) {
    if (!(y > 0.0)) throw DomainError("regressor: y must be positive (mask inactive frames)");
    const double e = y - y_hat;
    switch (kind.variant) {
        case Regressor::AE: return std::abs(e);
        case Regressor::SE: return e * e;
        case Regressor::APE: return std::abs(e) / y;
        case Regressor::SPE: return (e / y) * (e / y);
        case Regressor::TAPE: return std::max(kind.delta, std::abs(e) / y);
    }
    return 0.0;
}

double regressor_grad(const RegressorKind& kind, double y, double y_hat) {
    if (!(y > 0.0)) throw DomainError("regressor_grad: y must be positive");
    const double e = y_hat - y;
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    switch (kind.variant) {
        case Regressor::AE: return sign(e);
        case Regressor::SE: return 2.0 * e;
        case Regressor::APE: return sign(e) / y;
        case Regressor::SPE: return 2.0 * e / (y * y);
        case Regressor::TAPE:
            return std::abs(e) / y > kind.delta ? sign(e) / y : 0.0;
    }
    return 0.0;
}

double bce(double d, double d_hat) {
    return -(d * std::log(d_hat) + (1.0 - d) * std::log(1.0 - d_hat));
}

double bce_grad(double d, double d_hat) {
    return (d_hat - d) / (d_hat * (1.0 - d_hat));
}

void LossBatch::validate() const {
    const std::size_t count = n * t;
    if (y.size() != count || y_hat.size() != count || d.size() != count || d_hat.size() != count)
        throw ShapeError("LossBatch: array sizes do not match N x T");
    for (std::size_t i = 0; i < count; ++i) {
        if (d[i] != 0 && d[i] != 1) throw DomainError("LossBatch: activity must be 0 or 1");
        if (!(d_hat[i] > 0.0 && d_hat[i] < 1.0))
            throw DomainError("LossBatch: d_hat must be strictly inside (0, 1)");
    }
}

double masked_loss(const LossBatch& batch, const RegressorKind& kind) {
    batch.validate();
    const std::size_t count = batch.n * batch.t;
    if (count == 0) throw ShapeError("masked_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        if (batch.d[i]) acc += regressor(kind, batch.y[i], batch.y_hat[i]);
        acc += bce(static_cast<double>(batch.d[i]), batch.d_hat[i]);
    }
    return acc / static_cast<double>(count);
}

}  // namespace echorange::loss
