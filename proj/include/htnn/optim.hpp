#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htnn {

struct TrainSchedule {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double decay_factor = 10.0;
    std::size_t decay_every = 30;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
        if (decay_factor < 1.0) throw std::invalid_argument("decay_factor must be >= 1");
        if (decay_every == 0) throw std::invalid_argument("decay_every must be >= 1");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
        if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    }

    /// Step decay: lr / decay_factor^floor(epoch / decay_every), epoch 0-based.
    double lr_at(std::size_t epoch) const {
        return learning_rate / std::pow(decay_factor, static_cast<double>(epoch / decay_every));
    }
};

/// v' = momentum v - lr g;  p' = p + v'.  Applied to each tensor in turn.
inline void sgd_momentum_step(const std::vector<DenseTensor*>& params, const std::vector<DenseTensor>& grads,
                              std::vector<DenseTensor>& velocity, double lr, double momentum,
                              double weight_decay = 0.0) {
    if (params.size() != grads.size()) throw ShapeError("sgd: parameter and gradient counts differ");
    if (velocity.empty())
        for (const auto* p : params) velocity.emplace_back(p->shape());
    if (velocity.size() != params.size()) throw ShapeError("sgd: velocity count differs from parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        DenseTensor& p = *params[i];
        const DenseTensor& g = grads[i];
        DenseTensor& v = velocity[i];
        if (g.size() != p.size() || v.size() != p.size()) {
            throw ShapeError("sgd: gradient " + shape_str(g.shape()) + " does not match parameter " + shape_str(p.shape()));
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum * v[j] - lr * (g[j] + weight_decay * p[j]);
            p[j] += v[j];
        }
    }
}

}  // namespace htnn
