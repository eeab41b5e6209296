#include "echorange/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "echorange/errors.hpp"

namespace echorange::net {

namespace {

#ifndef NDEBUG
void debug_check_finite(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) assert(std::isfinite(t[i]));
}
#else
void debug_check_finite(const Tensor&) {}
#endif

// y += M v with M [rows x cols] row-major.
void matvec_acc(const double* m, int rows, int cols, const double* v, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double* row = m + static_cast<std::size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * v[j];
        y[i] += acc;
    }
}

// y += M^T v with M [rows x cols] row-major.
void matvec_t_acc(const double* m, int rows, int cols, const double* v, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double* row = m + static_cast<std::size_t>(i) * cols;
        const double vi = v[i];
        for (int j = 0; j < cols; ++j) y[j] += vi * row[j];
    }
}

// M += a b^T with a [rows], b [cols].
void outer_acc(double* m, int rows, int cols, const double* a, const double* b) {
    for (int i = 0; i < rows; ++i) {
        double* row = m + static_cast<std::size_t>(i) * cols;
        const double ai = a[i];
        for (int j = 0; j < cols; ++j) row[j] += ai * b[j];
    }
}

double stable_sigmoid(double x) {
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::min(1.0 - 1e-12, std::max(1e-12, s));
}

double stable_softplus(double x) {
    const double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return std::max(v, 1e-12);  // keeps the distance head strictly positive
}

}  // namespace

NodePtr make_leaf(Tensor value, bool requires_grad, std::string name) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    return node;
}

NodePtr Tape::leaf(Tensor value, bool requires_grad, std::string name) {
    return make_leaf(std::move(value), requires_grad, std::move(name));
}

NodePtr Tape::conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 3 || ws.size() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[0] ||
        b->value.shape() != std::vector<int>{ws[0]})
        throw ShapeError("conv2d: inconsistent shapes");
    const int cin = xs[0], T = xs[1], F = xs[2], cout = ws[0];

    auto out = make_leaf(Tensor({cout, T, F}));
    out->requires_grad = true;
    const std::size_t plane = static_cast<std::size_t>(T) * F;
    for (int o = 0; o < cout; ++o) {
        double* dst = out->value.data() + o * plane;
        const double bias = b->value[o];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = bias;
        for (int c = 0; c < cin; ++c) {
            const double* src = x->value.data() + c * plane;
            for (int dt = 0; dt < 3; ++dt)
                for (int df = 0; df < 3; ++df) {
                    const double wv = w->value.at(o, c, dt, df);
                    const int ot = dt - 1, of = df - 1;
                    const int t0 = std::max(0, -ot), t1 = std::min(T, T - ot);
                    const int f0 = std::max(0, -of), f1 = std::min(F, F - of);
                    for (int t = t0; t < t1; ++t) {
                        double* drow = dst + static_cast<std::size_t>(t) * F;
                        const double* srow = src + static_cast<std::size_t>(t + ot) * F + of;
                        for (int f = f0; f < f1; ++f) drow[f] += wv * srow[f];
                    }
                }
        }
    }

    debug_check_finite(out->value);
    record([x, w, b, out, cin, T, F, cout, plane] {
        if (out->grad.size() != out->value.size()) return;
        const Tensor& gy = out->grad;
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int o = 0; o < cout; ++o) {
                const double* g = gy.data() + o * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                gb[o] += acc;
            }
        }
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            for (int o = 0; o < cout; ++o) {
                const double* g = gy.data() + o * plane;
                for (int c = 0; c < cin; ++c) {
                    const double* src = x->value.data() + c * plane;
                    for (int dt = 0; dt < 3; ++dt)
                        for (int df = 0; df < 3; ++df) {
                            const int ot = dt - 1, of = df - 1;
                            const int t0 = std::max(0, -ot), t1 = std::min(T, T - ot);
                            const int f0 = std::max(0, -of), f1 = std::min(F, F - of);
                            double acc = 0.0;
                            for (int t = t0; t < t1; ++t) {
                                const double* grow = g + static_cast<std::size_t>(t) * F;
                                const double* srow =
                                    src + static_cast<std::size_t>(t + ot) * F + of;
                                for (int f = f0; f < f1; ++f) acc += grow[f] * srow[f];
                            }
                            gw.at(o, c, dt, df) += acc;
                        }
                }
            }
        }
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int o = 0; o < cout; ++o) {
                const double* g = gy.data() + o * plane;
                for (int c = 0; c < cin; ++c) {
                    double* dst = gx.data() + c * plane;
                    for (int dt = 0; dt < 3; ++dt)
                        for (int df = 0; df < 3; ++df) {
                            const double wv = w->value.at(o, c, dt, df);
                            const int ot = dt - 1, of = df - 1;
                            const int t0 = std::max(0, -ot), t1 = std::min(T, T - ot);
                            const int f0 = std::max(0, -of), f1 = std::min(F, F - of);
                            for (int t = t0; t < t1; ++t) {
                                const double* grow = g + static_cast<std::size_t>(t) * F;
                                double* drow = dst + static_cast<std::size_t>(t + ot) * F + of;
                                for (int f = f0; f < f1; ++f) drow[f] += wv * grow[f];
                            }
                        }
                }
            }
        }
    });
    return out;
}

NodePtr Tape::relu(const NodePtr& x) {
    auto out = make_leaf(Tensor(x->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < x->value.size(); ++i)
        out->value[i] = std::max(0.0, x->value[i]);
    record([x, out] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (x->value[i] > 0.0) gx[i] += out->grad[i];
    });
    return out;
}

NodePtr Tape::freq_max_pool(const NodePtr& x, int pool) {
    const auto& xs = x->value.shape();
    if (xs.size() != 3 || pool <= 0 || xs[2] % pool != 0)
        throw ShapeError("freq_max_pool: pool must divide the frequency axis");
    const int C = xs[0], T = xs[1], F = xs[2], G = F / pool;

    auto out = make_leaf(Tensor({C, T, G}));
    out->requires_grad = true;
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(C) * T * G);
    std::size_t idx = 0;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int g = 0; g < G; ++g, ++idx) {
                int best = g * pool;
                double bv = x->value.at(c, t, best);
                for (int f = g * pool + 1; f < (g + 1) * pool; ++f) {
                    const double v = x->value.at(c, t, f);
                    if (v > bv) {
                        bv = v;
                        best = f;
                    }
                }
                (*argmax)[idx] = best;
                out->value.at(c, t, g) = bv;
            }

    record([x, out, argmax, C, T, G] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        std::size_t idx = 0;
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                for (int g = 0; g < G; ++g, ++idx)
                    gx.at(c, t, (*argmax)[idx]) += out->grad.at(c, t, g);
    });
    return out;
}

NodePtr Tape::flatten_freq(const NodePtr& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 3) throw ShapeError("flatten_freq: expected [C x T x F]");
    const int C = xs[0], T = xs[1], F = xs[2];
    auto out = make_leaf(Tensor({T, C * F}));
    out->requires_grad = true;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < F; ++f) out->value.at(t, c * F + f) = x->value.at(c, t, f);
    record([x, out, C, T, F] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                for (int f = 0; f < F; ++f) gx.at(c, t, f) += out->grad.at(t, c * F + f);
    });
    return out;
}

NodePtr Tape::gru(const NodePtr& seq, const GruWeights& weights) {
    const auto& ss = seq->value.shape();
    if (ss.size() != 2) throw ShapeError("gru: expected [T x D]");
    const int T = ss[0], D = ss[1];
    const int H = weights.wz->value.dim(0);
    if (weights.wz->value.shape() != std::vector<int>{H, D} ||
        weights.uz->value.shape() != std::vector<int>{H, H} ||
        weights.bz->value.shape() != std::vector<int>{H})
        throw ShapeError("gru: weight shapes inconsistent");

    auto out = make_leaf(Tensor({T, H}));
    out->requires_grad = true;
    // caches for backward
    auto zs = std::make_shared<Tensor>(Tensor({T, H}));
    auto rs = std::make_shared<Tensor>(Tensor({T, H}));
    auto ns = std::make_shared<Tensor>(Tensor({T, H}));

    std::vector<double> h(H, 0.0), rh(H), az(H), ar(H), an(H);
    for (int t = 0; t < T; ++t) {
        const double* x_t = seq->value.data() + static_cast<std::size_t>(t) * D;
        for (int i = 0; i < H; ++i) az[i] = weights.bz->value[i];
        for (int i = 0; i < H; ++i) ar[i] = weights.br->value[i];
        matvec_acc(weights.wz->value.data(), H, D, x_t, az.data());
        matvec_acc(weights.uz->value.data(), H, H, h.data(), az.data());
        matvec_acc(weights.wr->value.data(), H, D, x_t, ar.data());
        matvec_acc(weights.ur->value.data(), H, H, h.data(), ar.data());
        for (int i = 0; i < H; ++i) {
            zs->at(t, i) = stable_sigmoid(az[i]);
            rs->at(t, i) = stable_sigmoid(ar[i]);
            rh[i] = rs->at(t, i) * h[i];
        }
        for (int i = 0; i < H; ++i) an[i] = weights.bn->value[i];
        matvec_acc(weights.wn->value.data(), H, D, x_t, an.data());
        matvec_acc(weights.un->value.data(), H, H, rh.data(), an.data());
        for (int i = 0; i < H; ++i) {
            ns->at(t, i) = std::tanh(an[i]);
            h[i] = (1.0 - zs->at(t, i)) * h[i] + zs->at(t, i) * ns->at(t, i);
            out->value.at(t, i) = h[i];
        }
    }

    debug_check_finite(out->value);
    record([seq, weights, out, zs, rs, ns, T, D, H] {
        if (out->grad.size() != out->value.size()) return;
        std::vector<double> dh(H, 0.0), daz(H), dar(H), dan(H), drh(H), hp(H);
        const bool need_dx = seq->requires_grad;
        Tensor* gx = need_dx ? &seq->ensure_grad() : nullptr;
        Tensor& gwz = weights.wz->ensure_grad();
        Tensor& gwr = weights.wr->ensure_grad();
        Tensor& gwn = weights.wn->ensure_grad();
        Tensor& guz = weights.uz->ensure_grad();
        Tensor& gur = weights.ur->ensure_grad();
        Tensor& gun = weights.un->ensure_grad();
        Tensor& gbz = weights.bz->ensure_grad();
        Tensor& gbr = weights.br->ensure_grad();
        Tensor& gbn = weights.bn->ensure_grad();

        for (int t = T - 1; t >= 0; --t) {
            const double* x_t = seq->value.data() + static_cast<std::size_t>(t) * D;
            for (int i = 0; i < H; ++i) hp[i] = t > 0 ? out->value.at(t - 1, i) : 0.0;
            for (int i = 0; i < H; ++i) dh[i] += out->grad.at(t, i);

            for (int i = 0; i < H; ++i) {
                const double z = zs->at(t, i), n = ns->at(t, i);
                const double dz = dh[i] * (n - hp[i]);
                daz[i] = dz * z * (1.0 - z);
                dan[i] = dh[i] * z * (1.0 - n * n);
            }
            std::fill(drh.begin(), drh.end(), 0.0);
            matvec_t_acc(weights.un->value.data(), H, H, dan.data(), drh.data());
            for (int i = 0; i < H; ++i) {
                const double r = rs->at(t, i);
                dar[i] = drh[i] * hp[i] * r * (1.0 - r);
            }

            // next-step carry: through the convex combination and all gates
            for (int i = 0; i < H; ++i) dh[i] = dh[i] * (1.0 - zs->at(t, i)) + drh[i] * rs->at(t, i);
            matvec_t_acc(weights.uz->value.data(), H, H, daz.data(), dh.data());
            matvec_t_acc(weights.ur->value.data(), H, H, dar.data(), dh.data());

            outer_acc(gwz.data(), H, D, daz.data(), x_t);
            outer_acc(gwr.data(), H, D, dar.data(), x_t);
            outer_acc(gwn.data(), H, D, dan.data(), x_t);
            outer_acc(guz.data(), H, H, daz.data(), hp.data());
            outer_acc(gur.data(), H, H, dar.data(), hp.data());
            std::vector<double> rh(H);
            for (int i = 0; i < H; ++i) rh[i] = rs->at(t, i) * hp[i];
            outer_acc(gun.data(), H, H, dan.data(), rh.data());
            for (int i = 0; i < H; ++i) {
                gbz[i] += daz[i];
                gbr[i] += dar[i];
                gbn[i] += dan[i];
            }
            if (need_dx) {
                double* gx_t = gx->data() + static_cast<std::size_t>(t) * D;
                matvec_t_acc(weights.wz->value.data(), H, D, daz.data(), gx_t);
                matvec_t_acc(weights.wr->value.data(), H, D, dar.data(), gx_t);
                matvec_t_acc(weights.wn->value.data(), H, D, dan.data(), gx_t);
            }
        }
    });
    return out;
}

NodePtr Tape::affine(const NodePtr& seq, const NodePtr& w, const NodePtr& b) {
    const auto& ss = seq->value.shape();
    const auto& ws = w->value.shape();
    if (ss.size() != 2 || ws.size() != 2 || ws[1] != ss[1] ||
        b->value.shape() != std::vector<int>{ws[0]})
        throw ShapeError("affine: inconsistent shapes");
    const int T = ss[0], D = ss[1], K = ws[0];

    auto out = make_leaf(Tensor({T, K}));
    out->requires_grad = true;
    for (int t = 0; t < T; ++t) {
        const double* x_t = seq->value.data() + static_cast<std::size_t>(t) * D;
        for (int k = 0; k < K; ++k) {
            const double* row = w->value.data() + static_cast<std::size_t>(k) * D;
            double acc = b->value[k];
            for (int d = 0; d < D; ++d) acc += row[d] * x_t[d];
            out->value.at(t, k) = acc;
        }
    }
    debug_check_finite(out->value);
    record([seq, w, b, out, T, D, K] {
        if (out->grad.size() != out->value.size()) return;
        for (int t = 0; t < T; ++t) {
            const double* x_t = seq->value.data() + static_cast<std::size_t>(t) * D;
            const double* g_t = out->grad.data() + static_cast<std::size_t>(t) * K;
            if (w->requires_grad) outer_acc(w->ensure_grad().data(), K, D, g_t, x_t);
            if (b->requires_grad)
                for (int k = 0; k < K; ++k) b->ensure_grad()[k] += g_t[k];
            if (seq->requires_grad)
                matvec_t_acc(w->value.data(), K, D, g_t,
                             seq->ensure_grad().data() + static_cast<std::size_t>(t) * D);
        }
    });
    return out;
}

NodePtr Tape::sigmoid(const NodePtr& x) {
    auto out = make_leaf(Tensor(x->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < x->value.size(); ++i)
        out->value[i] = stable_sigmoid(x->value[i]);
    record([x, out] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = out->value[i];
            gx[i] += out->grad[i] * s * (1.0 - s);
        }
    });
    return out;
}

NodePtr Tape::softplus(const NodePtr& x) {
    auto out = make_leaf(Tensor(x->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < x->value.size(); ++i)
        out->value[i] = stable_softplus(x->value[i]);
    record([x, out] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += out->grad[i] * stable_sigmoid(x->value[i]);
    });
    return out;
}

NodePtr Tape::add(const NodePtr& a, const NodePtr& b) {
    if (a->value.shape() != b->value.shape()) throw ShapeError("add: shape mismatch");
    auto out = make_leaf(Tensor(a->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = a->value[i] + b->value[i];
    record([a, b, out] {
        if (out->grad.size() != out->value.size()) return;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out->grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out->grad[i];
        }
    });
    return out;
}

NodePtr Tape::mul(const NodePtr& a, const NodePtr& b) {
    if (a->value.shape() != b->value.shape()) throw ShapeError("mul: shape mismatch");
    auto out = make_leaf(Tensor(a->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = a->value[i] * b->value[i];
    record([a, b, out] {
        if (out->grad.size() != out->value.size()) return;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out->grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out->grad[i] * a->value[i];
        }
    });
    return out;
}

NodePtr Tape::scale(const NodePtr& x, double s) {
    auto out = make_leaf(Tensor(x->value.shape()));
    out->requires_grad = true;
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = s * x->value[i];
    record([x, out, s] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * out->grad[i];
    });
    return out;
}

NodePtr Tape::sum(const NodePtr& x) {
    auto out = make_leaf(Tensor::scalar(0.0));
    out->requires_grad = true;
    double acc = 0.0;
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    out->value[0] = acc;
    record([x, out] {
        if (out->grad.size() != out->value.size()) return;
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out->grad[0];
    });
    return out;
}

NodePtr Tape::eq1_terms(const NodePtr& y_hat, const NodePtr& d_hat, const std::vector<double>& y,
                        const std::vector<std::uint8_t>& d, const loss::RegressorKind& kind,
                        bool include_regressor) {
    const auto T = static_cast<std::size_t>(y_hat->value.dim(0));
    if (y_hat->value.shape() != std::vector<int>{static_cast<int>(T), 1} ||
        d_hat->value.shape() != y_hat->value.shape() || y.size() != T || d.size() != T)
        throw ShapeError("eq1_terms: inconsistent shapes");

    auto out = make_leaf(Tensor::scalar(0.0));
    out->requires_grad = true;
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        if (include_regressor && d[t]) acc += loss::regressor(kind, y[t], y_hat->value[t]);
        acc += loss::bce(static_cast<double>(d[t]), d_hat->value[t]);
    }
    out->value[0] = acc;

    record([y_hat, d_hat, out, y, d, kind, T, include_regressor] {
        if (out->grad.size() != out->value.size()) return;
        const double g = out->grad[0];
        if (include_regressor && y_hat->requires_grad) {
            Tensor& gy = y_hat->ensure_grad();
            for (std::size_t t = 0; t < T; ++t)
                if (d[t]) gy[t] += g * loss::regressor_grad(kind, y[t], y_hat->value[t]);
        }
        if (d_hat->requires_grad) {
            Tensor& gd = d_hat->ensure_grad();
            for (std::size_t t = 0; t < T; ++t)
                gd[t] += g * loss::bce_grad(static_cast<double>(d[t]), d_hat->value[t]);
        }
    });
    return out;
}

void Tape::backward(const NodePtr& loss_node) {
    if (steps_.empty()) throw StateError("backward: no forward pass recorded");
    if (consumed_) throw StateError("backward: tape already consumed");
    if (loss_node->value.size() != 1) throw ShapeError("backward: loss must be scalar");
    consumed_ = true;
    loss_node->ensure_grad()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
}

}  // namespace echorange::net
