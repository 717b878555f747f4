#pragma once

#include "core.hpp"

#include <fftw3.h>

#include <cstring>
#include <mutex>

namespace blochwp {

namespace detail {
// FFTW's planner is not thread-safe; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
} // namespace detail

/// Unnormalized forward / normalized backward complex DFT over a row-major grid.
class FourierTransform {
public:
    explicit FourierTransform(std::vector<int> shape) : shape_(std::move(shape)) {
        require(!shape_.empty(), ErrorKind::invalid_argument, "FFT needs at least one axis");
        size_ = 1;
        for (int n : shape_) {
            require(n >= 1, ErrorKind::invalid_argument, "FFT axis length must be positive");
            size_ *= static_cast<std::size_t>(n);
        }
        buf_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * size_));
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fwd_ = fftw_plan_dft(static_cast<int>(shape_.size()), shape_.data(), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft(static_cast<int>(shape_.size()), shape_.data(), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }

    FourierTransform(const FourierTransform& other) : FourierTransform(other.shape_) {}
    FourierTransform& operator=(const FourierTransform&) = delete;

    ~FourierTransform() {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(buf_);
    }

    std::size_t size() const { return size_; }
    const std::vector<int>& shape() const { return shape_; }

    void forward(std::vector<cplx>& data) const { run(fwd_, data, 1.0); }
    void backward(std::vector<cplx>& data) const { run(bwd_, data, 1.0 / static_cast<double>(size_)); }

private:
    void run(fftw_plan plan, std::vector<cplx>& data, double scale) const {
        require(data.size() == size_, ErrorKind::grid_mismatch, "FFT input has the wrong length");
        std::memcpy(buf_, data.data(), sizeof(fftw_complex) * size_);
        fftw_execute(plan);
        const auto* src = reinterpret_cast<const cplx*>(buf_);
        for (std::size_t i = 0; i < size_; ++i) data[i] = src[i] * scale;
    }

    std::vector<int> shape_;
    std::size_t size_ = 0;
    fftw_complex* buf_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

/// Angular wavenumbers of an N-point periodic grid on a box of length `length`, FFT order.
inline std::vector<double> wavenumbers(int n, double length) {
    std::vector<double> k(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int m = i < (n + 1) / 2 ? i : i - n;
        k[static_cast<std::size_t>(i)] = 2.0 * pi * m / length;
    }
    return k;
}

} // namespace blochwp
