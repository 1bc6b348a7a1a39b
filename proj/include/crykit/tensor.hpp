#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "crykit/errors.hpp"

namespace crykit {

/// Dense n-dimensional array, row-major, double precision.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(count(shape), 0.0);
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeMismatch("nonpositive tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    bool same_shape(const Tensor& other) const {
        return shape == other.shape;
    }
};

}  // namespace crykit
