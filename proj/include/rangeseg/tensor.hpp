// Dense rank-4 float tensor (NCHW) and the elementwise operations shared by
// the whole library. All functions here are pure; parallel_for splits work
// over whole output elements only, so results are identical for any thread
// count.
#pragma once

#include <cassert>
#include <cstdint>
#include <exception>
#include <initializer_list>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace rangeseg {

inline int& detail_thread_count() {
    static int count = 1;
    return count;
}

inline int num_threads() { return detail_thread_count(); }

inline void set_num_threads(int n) {
    if (n < 1)
        throw std::invalid_argument("set_num_threads: thread count must be >= 1, got " +
                                    std::to_string(n));
    detail_thread_count() = n;
}

// Runs body(i) for i in [0, count). Each index is processed exactly once by
// exactly one thread; no cross-index reductions happen here, which keeps
// every op bitwise reproducible regardless of the thread count.
template <typename F>
void parallel_for(std::int64_t count, F&& body) {
    const int requested = num_threads();
    if (requested <= 1 || count <= 1) {
        for (std::int64_t i = 0; i < count; ++i) body(i);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(requested, count));
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto run_range = [&](std::int64_t begin, std::int64_t end) {
        try {
            for (std::int64_t i = begin; i < end; ++i) body(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    for (int w = 1; w < workers; ++w)
        pool.emplace_back(run_range, count * w / workers, count * (w + 1) / workers);
    run_range(0, count / workers);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Feature map of shape (batch, channel, rows, cols), row-major contiguous:
// element (n, c, y, x) lives at ((n*C + c)*H + y)*W + x.
class Tensor4 {
  public:
    Tensor4() : n_(1), c_(1), h_(1), w_(1), data_(1, 0.f) {}

    Tensor4(int n, int c, int h, int w, float fill = 0.f)
        : n_(n), c_(c), h_(h), w_(w) {
        check_dims(n, c, h, w);
        data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
    }

    static Tensor4 from_data(int n, int c, int h, int w, std::vector<float> values) {
        check_dims(n, c, h, w);
        const auto expected = static_cast<std::size_t>(n) * c * h * w;
        if (values.size() != expected)
            throw std::invalid_argument("Tensor4::from_data: buffer holds " +
                                        std::to_string(values.size()) + " values, shape needs " +
                                        std::to_string(expected));
        Tensor4 t;
        t.n_ = n; t.c_ = c; t.h_ = h; t.w_ = w;
        t.data_ = std::move(values);
        return t;
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    float& at(int n, int c, int y, int x) {
        assert(in_range(n, c, y, x));
        return data_[index(n, c, y, x)];
    }
    float at(int n, int c, int y, int x) const {
        assert(in_range(n, c, y, x));
        return data_[index(n, c, y, x)];
    }

    float* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
    const float* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::string shape_str() const {
        return std::to_string(n_) + "x" + std::to_string(c_) + "x" +
               std::to_string(h_) + "x" + std::to_string(w_);
    }

  private:
    static void check_dims(int n, int c, int h, int w) {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw std::invalid_argument("Tensor4: all dimensions must be >= 1, got " +
                                        std::to_string(n) + "x" + std::to_string(c) + "x" +
                                        std::to_string(h) + "x" + std::to_string(w));
    }
    bool in_range(int n, int c, int y, int x) const {
        return n >= 0 && n < n_ && c >= 0 && c < c_ && y >= 0 && y < h_ && x >= 0 && x < w_;
    }
    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }

    int n_, c_, h_, w_;
    std::vector<float> data_;
};

inline void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": operand shapes differ, " +
                                    a.shape_str() + " vs " + b.shape_str());
}

inline Tensor4 relu(const Tensor4& x) {
    Tensor4 out = x;
    for (float& v : out.data()) v = v > 0.f ? v : 0.f;
    return out;
}

inline Tensor4 elementwise_mul(const Tensor4& a, const Tensor4& b) {
    require_same_shape(a, b, "elementwise_mul");
    Tensor4 out = a;
    const float* pb = b.data().data();
    float* po = out.data().data();
    const std::int64_t count = out.size();
    for (std::int64_t i = 0; i < count; ++i) po[i] *= pb[i];
    return out;
}

inline Tensor4 elementwise_add(const Tensor4& a, const Tensor4& b) {
    require_same_shape(a, b, "elementwise_add");
    Tensor4 out = a;
    const float* pb = b.data().data();
    float* po = out.data().data();
    const std::int64_t count = out.size();
    for (std::int64_t i = 0; i < count; ++i) po[i] += pb[i];
    return out;
}

// Concatenates along the channel axis; batch and spatial dims must agree.
// Channel order of the inputs is preserved.
inline Tensor4 concat_channels(const std::vector<const Tensor4*>& parts) {
    if (parts.empty())
        throw std::invalid_argument("concat_channels: nothing to concatenate");
    const Tensor4& first = *parts.front();
    int total_c = 0;
    for (const Tensor4* p : parts) {
        if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
            throw std::invalid_argument("concat_channels: non-channel dims differ, " +
                                        first.shape_str() + " vs " + p->shape_str());
        total_c += p->c();
    }
    Tensor4 out(first.n(), total_c, first.h(), first.w());
    const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
    for (int n = 0; n < first.n(); ++n) {
        int c_out = 0;
        for (const Tensor4* p : parts) {
            for (int c = 0; c < p->c(); ++c, ++c_out) {
                const float* src = p->plane(n, c);
                float* dst = out.plane(n, c_out);
                std::copy(src, src + plane, dst);
            }
        }
    }
    return out;
}

inline Tensor4 concat_channels(std::initializer_list<const Tensor4*> parts) {
    return concat_channels(std::vector<const Tensor4*>(parts));
}

}  // namespace rangeseg
