#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace echorange::net {

// Dense row-major tensor, 64-bit storage. All graph arithmetic runs in
// doubles; checkpoints round through float32 at the file boundary.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}
    Tensor(std::vector<int> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        assert(data_.size() == count(shape_));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexed accessors for the ranks the model uses.
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double& at(int i, int j, int k, int l) {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] +
                     l];
    }
    double at(int i, int j, int k, int l) const {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] +
                     l];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace echorange::net
