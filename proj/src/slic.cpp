#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "busdx/preprocess.hpp"

namespace busdx {

void SlicConfig::validate() const {
    if (region_size < 2) {
        throw std::invalid_argument("SLIC region size must be >= 2");
    }
    if (!(ruler > 0.0)) {
        throw std::invalid_argument("SLIC ruler must be > 0");
    }
    if (iterations < 1) {
        throw std::invalid_argument("SLIC iterations must be >= 1");
    }
}

int slic_grid_count(int length, int region_size) {
    return (length + region_size - 1) / region_size;
}

namespace {

struct Center {
    std::vector<double> color;
    double y = 0.0;
    double x = 0.0;
};

double color_dist2(const ImageTensor& img, std::size_t pixel, const std::vector<double>& color) {
    double d = 0.0;
    const float* p = img.pixels.data() + pixel * img.channels;
    for (int c = 0; c < img.channels; ++c) {
        const double diff = p[c] - color[c];
        d += diff * diff;
    }
    return d;
}

double gradient_at(const ImageTensor& img, int y, int x) {
    const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, img.width - 1);
    const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, img.height - 1);
    double g = 0.0;
    for (int c = 0; c < img.channels; ++c) {
        const double dx = img.at(y, x1, c) - img.at(y, x0, c);
        const double dy = img.at(y1, x, c) - img.at(y0, x, c);
        g += dx * dx + dy * dy;
    }
    return g;
}

// 4-connected components of a label grid. Returns component id per pixel.
std::vector<int> connected_components(const std::vector<int>& labels, int h, int w, int& n_components) {
    std::vector<int> comp(labels.size(), -1);
    std::vector<int> stack;
    n_components = 0;
    for (int start = 0; start < h * w; ++start) {
        if (comp[start] >= 0) {
            continue;
        }
        const int id = n_components++;
        comp[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / w, x = p % w;
            const int nbrs[4] = {x > 0 ? p - 1 : -1, x + 1 < w ? p + 1 : -1, y > 0 ? p - w : -1,
                                 y + 1 < h ? p + w : -1};
            for (int q : nbrs) {
                if (q >= 0 && comp[q] < 0 && labels[q] == labels[p]) {
                    comp[q] = id;
                    stack.push_back(q);
                }
            }
        }
    }
    return comp;
}

// Repeatedly absorbs the smallest stray component (a non-largest piece of its
// label, or an undersized region) into the neighboring label it shares the
// longest border with. Each step removes one component, so this terminates.
void enforce_connectivity(std::vector<int>& labels, int h, int w, std::size_t min_size) {
    while (true) {
        int n_comp = 0;
        const std::vector<int> comp = connected_components(labels, h, w, n_comp);
        if (n_comp <= 1) {
            return;
        }
        std::vector<std::size_t> size(n_comp, 0);
        std::vector<int> comp_label(n_comp, 0);
        for (std::size_t p = 0; p < comp.size(); ++p) {
            ++size[comp[p]];
            comp_label[comp[p]] = labels[p];
        }
        const int max_label = *std::max_element(labels.begin(), labels.end());
        std::vector<int> largest(max_label + 1, -1);
        for (int c = 0; c < n_comp; ++c) {
            int& best = largest[comp_label[c]];
            if (best < 0 || size[c] > size[best]) {
                best = c;
            }
        }
        int stray = -1;
        for (int c = 0; c < n_comp; ++c) {
            const bool is_stray = largest[comp_label[c]] != c || size[c] < min_size;
            if (is_stray && (stray < 0 || size[c] < size[stray])) {
                stray = c;
            }
        }
        if (stray < 0) {
            return;
        }
        std::vector<std::size_t> border(max_label + 1, 0);
        for (int p = 0; p < h * w; ++p) {
            if (comp[p] != stray) {
                continue;
            }
            const int y = p / w, x = p % w;
            const int nbrs[4] = {x > 0 ? p - 1 : -1, x + 1 < w ? p + 1 : -1, y > 0 ? p - w : -1,
                                 y + 1 < h ? p + w : -1};
            for (int q : nbrs) {
                if (q >= 0 && comp[q] != stray) {
                    ++border[labels[q]];
                }
            }
        }
        const int target = static_cast<int>(std::max_element(border.begin(), border.end()) - border.begin());
        if (border[target] == 0) {
            return;
        }
        for (int p = 0; p < h * w; ++p) {
            if (comp[p] == stray) {
                labels[p] = target;
            }
        }
    }
}

}  // namespace

SuperpixelLabelMap slic_segment(const ImageTensor& img, const SlicConfig& cfg) {
    cfg.validate();
    if (img.empty()) {
        throw std::invalid_argument("slic_segment: empty image");
    }
    const int h = img.height, w = img.width, nc = img.channels;
    const int S = cfg.region_size;
    if (S > std::min(h, w)) {
        throw std::invalid_argument("SLIC region size " + std::to_string(S) + " exceeds image side " +
                                    std::to_string(std::min(h, w)));
    }

    const int gy = slic_grid_count(h, S), gx = slic_grid_count(w, S);
    std::vector<Center> centers;
    centers.reserve(static_cast<std::size_t>(gy) * gx);
    for (int iy = 0; iy < gy; ++iy) {
        for (int ix = 0; ix < gx; ++ix) {
            int cy = static_cast<int>((iy + 0.5) * h / gy);
            int cx = static_cast<int>((ix + 0.5) * w / gx);
            double best = gradient_at(img, cy, cx);
            int by = cy, bx = cx;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = cy + dy, xx = cx + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
                        continue;
                    }
                    const double g = gradient_at(img, yy, xx);
                    if (g < best) {
                        best = g;
                        by = yy;
                        bx = xx;
                    }
                }
            }
            Center c;
            c.y = by;
            c.x = bx;
            c.color.assign(nc, 0.0);
            for (int k = 0; k < nc; ++k) {
                c.color[k] = img.at(by, bx, k);
            }
            centers.push_back(std::move(c));
        }
    }

    const double spatial_weight = (cfg.ruler / S) * (cfg.ruler / S);
    const std::size_t n_pixels = static_cast<std::size_t>(h) * w;
    std::vector<int> labels(n_pixels, -1);
    std::vector<double> dist(n_pixels);

    auto distance2 = [&](std::size_t p, int y, int x, const Center& c) {
        const double dy = y - c.y, dx = x - c.x;
        return color_dist2(img, p, c.color) + (dy * dy + dx * dx) * spatial_weight;
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<int> previous = labels;
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        std::fill(labels.begin(), labels.end(), -1);
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& c = centers[k];
            const int y0 = std::max(0, static_cast<int>(std::floor(c.y - S)));
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + S)));
            const int x0 = std::max(0, static_cast<int>(std::floor(c.x - S)));
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + S)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    const double d = distance2(p, y, x, c);
                    if (d < dist[p]) {
                        dist[p] = d;
                        labels[p] = static_cast<int>(k);
                    }
                }
            }
        }
        // Pixels outside every search window fall back to a global search.
        for (std::size_t p = 0; p < n_pixels; ++p) {
            if (labels[p] >= 0) {
                continue;
            }
            const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const double d = distance2(p, y, x, centers[k]);
                if (d < dist[p]) {
                    dist[p] = d;
                    labels[p] = static_cast<int>(k);
                }
            }
        }

        std::vector<double> sum(centers.size() * (nc + 2), 0.0);
        std::vector<std::size_t> count(centers.size(), 0);
        for (std::size_t p = 0; p < n_pixels; ++p) {
            const int k = labels[p];
            double* s = sum.data() + static_cast<std::size_t>(k) * (nc + 2);
            for (int c = 0; c < nc; ++c) {
                s[c] += img.pixels[p * nc + c];
            }
            s[nc] += static_cast<double>(p / w);
            s[nc + 1] += static_cast<double>(p % w);
            ++count[k];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (count[k] == 0) {
                continue;
            }
            const double* s = sum.data() + k * (nc + 2);
            for (int c = 0; c < nc; ++c) {
                centers[k].color[c] = s[c] / count[k];
            }
            centers[k].y = s[nc] / count[k];
            centers[k].x = s[nc + 1] / count[k];
        }
        if (labels == previous) {
            break;
        }
    }

    if (cfg.enforce_connectivity) {
        const std::size_t min_size = n_pixels / centers.size() / 4;
        enforce_connectivity(labels, h, w, min_size);
    }

    // Compact relabel in raster order of first appearance.
    std::vector<int> remap(centers.size(), -1);
    SuperpixelLabelMap out;
    out.height = h;
    out.width = w;
    out.labels.resize(n_pixels);
    for (std::size_t p = 0; p < n_pixels; ++p) {
        int& r = remap[labels[p]];
        if (r < 0) {
            r = out.n_labels++;
        }
        out.labels[p] = r;
    }
    return out;
}

ImageTensor render_superpixel_means(const ImageTensor& img, const SuperpixelLabelMap& labels) {
    if (labels.height != img.height || labels.width != img.width) {
        throw std::invalid_argument("render_superpixel_means: label map and image shapes differ");
    }
    const int nc = img.channels;
    std::vector<double> sum(static_cast<std::size_t>(labels.n_labels) * nc, 0.0);
    std::vector<std::size_t> count(labels.n_labels, 0);
    for (std::size_t p = 0; p < labels.labels.size(); ++p) {
        const int k = labels.labels[p];
        if (k < 0 || k >= labels.n_labels) {
            throw std::out_of_range("render_superpixel_means: label " + std::to_string(k) + " out of range");
        }
        for (int c = 0; c < nc; ++c) {
            sum[static_cast<std::size_t>(k) * nc + c] += img.pixels[p * nc + c];
        }
        ++count[k];
    }
    ImageTensor out(img.height, img.width, nc);
    for (std::size_t p = 0; p < labels.labels.size(); ++p) {
        const int k = labels.labels[p];
        for (int c = 0; c < nc; ++c) {
            out.pixels[p * nc + c] = static_cast<float>(sum[static_cast<std::size_t>(k) * nc + c] / count[k]);
        }
    }
    return out;
}

}  // namespace busdx
