// tensor.hpp
#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace dip {

/// Dimensions of a dense tensor. (channels, height, width) for images, a
/// single length for vectors.
struct TensorShape {
    std::vector<std::size_t> dims;

    TensorShape() = default;
    TensorShape(std::initializer_list<std::size_t> d) : dims(d) { validate(); }
    explicit TensorShape(std::vector<std::size_t> d) : dims(std::move(d)) { validate(); }

    std::size_t count() const
    {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

    std::string str() const
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < dims.size(); ++i)
            os << (i ? "x" : "") << dims[i];
        return os.str();
    }

    bool operator==(const TensorShape&) const = default;

private:
    void validate() const
    {
        if (dims.empty())
            throw ConfigError("tensor shape needs at least one dimension");
        for (auto d : dims)
            if (d == 0)
                throw ConfigError("tensor dimension must be >= 1");
    }
};

/// Channel-major (CHW) image of doubles.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill)
    {
    }

    TensorShape shape() const { return TensorShape{channels, height, width}; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    bool operator==(const Image&) const = default;
};

} // namespace dip
