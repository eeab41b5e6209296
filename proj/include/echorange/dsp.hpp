#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace echorange::dsp {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// In-place iterative radix-2 FFT. n must be a power of two.
void fft(std::vector<std::complex<double>>& x, bool inverse);

// Forward FFT of a real signal; returns the n/2+1 non-redundant bins.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft: reconstructs the length-n real signal from n/2+1 bins.
std::vector<double> irfft(const std::vector<std::complex<double>>& bins, std::size_t n);

// Periodic Hann window of length n: w[k] = 0.5 - 0.5 cos(2 pi k / n).
std::vector<double> hann_window(std::size_t n);

// Linear convolution via FFT overlap of the full signals. Output length
// len(x) + len(h) - 1.
std::vector<double> fft_convolve(const std::vector<double>& x, const std::vector<double>& h);

}  // namespace echorange::dsp
