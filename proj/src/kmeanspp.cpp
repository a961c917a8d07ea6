#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "busdx/preprocess.hpp"

namespace busdx {

namespace {

double dist2(const float* p, const std::vector<float>& c) {
    double d = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
        const double diff = static_cast<double>(p[k]) - c[k];
        d += diff * diff;
    }
    return d;
}

}  // namespace

KMeansResult kmeanspp_cluster(const ImageTensor& img, const KMeansConfig& cfg, std::uint64_t seed) {
    if (cfg.k < 1) {
        throw std::invalid_argument("k-means++ needs K >= 1");
    }
    if (cfg.epsilon < 0.0 || cfg.max_iterations < 1) {
        throw std::invalid_argument("k-means++ needs epsilon >= 0 and max_iterations >= 1");
    }
    if (img.empty()) {
        throw std::invalid_argument("k-means++: empty image");
    }
    const int nc = img.channels;
    const std::size_t n = img.pixels.size() / nc;
    auto pixel = [&](std::size_t i) { return img.pixels.data() + i * nc; };

    std::mt19937_64 rng(seed);
    KMeansResult res;

    // Seeding: first center uniform, then D^2 sampling.
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    const std::size_t i0 = first(rng);
    res.centers.emplace_back(pixel(i0), pixel(i0) + nc);
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) {
        nearest[i] = dist2(pixel(i), res.centers[0]);
    }
    while (static_cast<int>(res.centers.size()) < cfg.k) {
        double total = 0.0;
        for (double d : nearest) {
            total += d;
        }
        std::size_t chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            for (chosen = 0; chosen + 1 < n; ++chosen) {
                target -= nearest[chosen];
                if (target < 0.0 && nearest[chosen] > 0.0) {
                    break;
                }
            }
        } else {
            // Fewer distinct colors than K: duplicate centers stay empty and
            // are handled by the re-seed rule below.
            chosen = first(rng);
        }
        res.centers.emplace_back(pixel(chosen), pixel(chosen) + nc);
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], dist2(pixel(i), res.centers.back()));
        }
    }

    const int k = cfg.k;
    res.assignment.assign(n, 0);
    std::vector<double> d_assigned(n);
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = dist2(pixel(i), res.centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            res.assignment[i] = best;
            d_assigned[i] = best_d;
            objective += best_d;
        }
        res.objective.push_back(objective);
        res.iterations = iter + 1;

        std::vector<std::vector<double>> sum(k, std::vector<double>(nc, 0.0));
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = res.assignment[i];
            for (int ch = 0; ch < nc; ++ch) {
                sum[c][ch] += pixel(i)[ch];
            }
            ++count[c];
        }
        double max_shift = 0.0;
        for (int c = 0; c < k; ++c) {
            std::vector<float> updated(nc);
            if (count[c] == 0) {
                // Re-seed an empty cluster at the pixel farthest from its center.
                const auto far = static_cast<std::size_t>(
                    std::max_element(d_assigned.begin(), d_assigned.end()) - d_assigned.begin());
                if (d_assigned[far] <= 0.0) {
                    continue;
                }
                updated.assign(pixel(far), pixel(far) + nc);
                d_assigned[far] = 0.0;
            } else {
                for (int ch = 0; ch < nc; ++ch) {
                    updated[ch] = static_cast<float>(sum[c][ch] / count[c]);
                }
            }
            max_shift = std::max(max_shift, std::sqrt(dist2(updated.data(), res.centers[c])));
            res.centers[c] = std::move(updated);
        }
        if (max_shift < cfg.epsilon) {
            break;
        }
    }

    // Final assignment against the final centers.
    res.quantized = ImageTensor(img.height, img.width, nc);
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double d = dist2(pixel(i), res.centers[c]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        res.assignment[i] = best;
        objective += best_d;
        for (int ch = 0; ch < nc; ++ch) {
            res.quantized.pixels[i * nc + ch] = std::clamp(res.centers[best][ch], 0.0f, 1.0f);
        }
    }
    res.objective.push_back(objective);
    return res;
}

ImageTensor kmeanspp_quantize(const ImageTensor& img, const KMeansConfig& cfg, std::uint64_t seed) {
    return kmeanspp_cluster(img, cfg, seed).quantized;
}

}  // namespace busdx
