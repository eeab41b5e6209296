#include "echorange/dsp.hpp"

#include <cmath>

#include "echorange/errors.hpp"

namespace echorange::dsp {

void fft(std::vector<std::complex<double>>& x, bool inverse) {
    const std::size_t n = x.size();
    if (n == 0) return;
    if ((n & (n - 1)) != 0) throw DomainError("fft: size must be a power of two");

    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = x[i + k];
                const std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& v : x) v *= inv_n;
    }
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    std::vector<std::complex<double>> buf(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
    fft(buf, false);
    buf.resize(x.size() / 2 + 1);
    return buf;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& bins, std::size_t n) {
    if (bins.size() != n / 2 + 1) throw ShapeError("irfft: bin count does not match n");
    std::vector<std::complex<double>> buf(n);
    for (std::size_t k = 0; k < bins.size(); ++k) buf[k] = bins[k];
    for (std::size_t k = bins.size(); k < n; ++k) buf[k] = std::conj(bins[n - k]);
    fft(buf, true);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
    return out;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k)
        w[k] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(n));
    return w;
}

std::vector<double> fft_convolve(const std::vector<double>& x, const std::vector<double>& h) {
    if (x.empty() || h.empty()) return {};
    const std::size_t out_len = x.size() + h.size() - 1;
    std::size_t n = 1;
    while (n < out_len) n <<= 1;
    std::vector<std::complex<double>> a(n), b(n);
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = {x[i], 0.0};
    for (std::size_t i = 0; i < h.size(); ++i) b[i] = {h[i], 0.0};
    fft(a, false);
    fft(b, false);
    for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
    fft(a, true);
    std::vector<double> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) out[i] = a[i].real();
    return out;
}

}  // namespace echorange::dsp
