#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hsbp/error.hpp"

namespace hsbp {

// Row-major 2D grid indexed as (x, y) with x the column.
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(int width, int height, const T& fill = T{})
        : width_(width), height_(height), data_(checked_size(width, height), fill) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(int x, int y) const noexcept {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }

    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(int width, int height) const noexcept { return width_ == width && height_ == height; }

    template <class U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static std::size_t checked_size(int width, int height) {
        require(width >= 0 && height >= 0, ErrorKind::InvalidArgument, "negative grid dimensions");
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Image = Grid<double>;
// std::vector<bool> is avoided so masks expose contiguous storage.
using Mask = Grid<unsigned char>;

template <class T, class U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const std::string& what) {
    require(a.same_shape(b), ErrorKind::DimensionMismatch,
            what + ": " + std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                std::to_string(b.width()) + "x" + std::to_string(b.height()));
}

inline std::size_t count(const Mask& mask) {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](unsigned char v) { return v != 0; }));
}

inline double max_value(const Image& image) {
    if (image.empty()) return 0.0;
    return *std::max_element(image.begin(), image.end());
}

} // namespace hsbp
