#include "busdx/nn/adam.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace busdx::nn {

Param::Param(std::string n, std::vector<std::int64_t> s) : name(std::move(n)), shape(std::move(s)) {
    const auto count = static_cast<std::size_t>(
        std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>()));
    value.assign(count, 0.0f);
    grad.assign(count, 0.0f);
    m.assign(count, 0.0f);
    v.assign(count, 0.0f);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void init_uniform(Param& p, double limit, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(static_cast<float>(-limit), static_cast<float>(limit));
    for (float& x : p.value) {
        x = dist(rng);
    }
}

void init_he_uniform(Param& p, int fan_in, std::mt19937_64& rng) {
    init_uniform(p, std::sqrt(6.0 / fan_in), rng);
}

void init_glorot_uniform(Param& p, int fan_in, int fan_out, std::mt19937_64& rng) {
    init_uniform(p, std::sqrt(6.0 / (fan_in + fan_out)), rng);
}

void Adam::step(std::vector<Param*> params) {
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double lr_t = options_.learning_rate * std::sqrt(1.0 - std::pow(b2, static_cast<double>(t_))) /
                        (1.0 - std::pow(b1, static_cast<double>(t_)));
    const auto fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
    const auto flr = static_cast<float>(lr_t), feps = static_cast<float>(options_.epsilon);
    for (Param* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const float g = p->grad[i];
            p->m[i] = fb1 * p->m[i] + (1.0f - fb1) * g;
            p->v[i] = fb2 * p->v[i] + (1.0f - fb2) * g * g;
            p->value[i] -= flr * p->m[i] / (std::sqrt(p->v[i]) + feps);
        }
    }
}

}  // namespace busdx::nn
