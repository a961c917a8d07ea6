#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace busdx::nn {

/// A trainable tensor with its gradient and Adam moment buffers.
struct Param {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> value;
    std::vector<float> grad;
    std::vector<float> m;
    std::vector<float> v;

    Param() = default;
    Param(std::string n, std::vector<std::int64_t> s);

    [[nodiscard]] std::size_t size() const { return value.size(); }
    void zero_grad();
};

/// Uniform(-limit, limit) fill.
void init_uniform(Param& p, double limit, std::mt19937_64& rng);
/// he_uniform: limit = sqrt(6 / fan_in).
void init_he_uniform(Param& p, int fan_in, std::mt19937_64& rng);
/// glorot_uniform: limit = sqrt(6 / (fan_in + fan_out)).
void init_glorot_uniform(Param& p, int fan_in, int fan_out, std::mt19937_64& rng);

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    /// One bias-corrected update of every parameter from its accumulated gradient.
    void step(std::vector<Param*> params);
    [[nodiscard]] long steps() const { return t_; }

private:
    AdamOptions options_;
    long t_ = 0;
};

}  // namespace busdx::nn
