#include "limeil/slic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "limeil/binary_io.hpp"
#include "limeil/error.hpp"

namespace limeil {
namespace {

struct Center {
    double intensity = 0.0;
    double y = 0.0;
    double x = 0.0;
};

struct Components {
    std::vector<int> id;             // per pixel
    std::vector<int> label;          // per component
    std::vector<std::size_t> size;   // per component
};

Components find_components(const std::vector<int>& labels, std::size_t rows, std::size_t cols) {
    Components cc;
    cc.id.assign(labels.size(), -1);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < labels.size(); ++start) {
        if (cc.id[start] >= 0) continue;
        const int comp = static_cast<int>(cc.label.size());
        const int lab = labels[start];
        cc.label.push_back(lab);
        cc.size.push_back(0);
        stack.push_back(start);
        cc.id[start] = comp;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++cc.size[comp];
            const std::size_t y = p / cols, x = p % cols;
            auto visit = [&](std::size_t q) {
                if (cc.id[q] < 0 && labels[q] == lab) {
                    cc.id[q] = comp;
                    stack.push_back(q);
                }
            };
            if (y > 0) visit(p - cols);
            if (y + 1 < rows) visit(p + cols);
            if (x > 0) visit(p - 1);
            if (x + 1 < cols) visit(p + 1);
        }
    }
    return cc;
}

// Every label ends up as a single 4-connected region: the largest component of
// a label keeps it, other components join the largest adjacent segment.
void enforce_connectivity(std::vector<int>& labels, std::size_t rows, std::size_t cols) {
    for (;;) {
        const Components cc = find_components(labels, rows, cols);
        const int max_label = *std::max_element(labels.begin(), labels.end());
        std::vector<int> main_comp(static_cast<std::size_t>(max_label) + 1, -1);
        for (std::size_t c = 0; c < cc.label.size(); ++c) {
            int& m = main_comp[static_cast<std::size_t>(cc.label[c])];
            if (m < 0 || cc.size[c] > cc.size[static_cast<std::size_t>(m)]) m = static_cast<int>(c);
        }
        auto is_main = [&](int comp) {
            return main_comp[static_cast<std::size_t>(cc.label[static_cast<std::size_t>(comp)])] == comp;
        };

        // For every orphan component, the best adjacent main component.
        std::vector<int> target(cc.label.size(), -1);
        bool any_orphan = false;
        auto consider = [&](int orphan, int neighbour) {
            if (!is_main(neighbour)) return;
            int& t = target[static_cast<std::size_t>(orphan)];
            if (t < 0) {
                t = neighbour;
                return;
            }
            const auto nb = static_cast<std::size_t>(neighbour), cur = static_cast<std::size_t>(t);
            if (cc.size[nb] > cc.size[cur] ||
                (cc.size[nb] == cc.size[cur] && cc.label[nb] < cc.label[cur]))
                t = neighbour;
        };
        for (std::size_t p = 0; p < labels.size(); ++p) {
            const int comp = cc.id[p];
            if (is_main(comp)) continue;
            any_orphan = true;
            const std::size_t y = p / cols, x = p % cols;
            if (y > 0) consider(comp, cc.id[p - cols]);
            if (y + 1 < rows) consider(comp, cc.id[p + cols]);
            if (x > 0) consider(comp, cc.id[p - 1]);
            if (x + 1 < cols) consider(comp, cc.id[p + 1]);
        }
        if (!any_orphan) return;
        for (std::size_t p = 0; p < labels.size(); ++p) {
            const int t = target[static_cast<std::size_t>(cc.id[p])];
            if (t >= 0) labels[p] = cc.label[static_cast<std::size_t>(t)];
        }
    }
}

std::size_t relabel_dense(std::vector<int>& labels) {
    const int max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    std::vector<int> remap(static_cast<std::size_t>(max_label) + 1, -1);
    int next = 0;
    for (int& l : labels) {
        int& r = remap[static_cast<std::size_t>(l)];
        if (r < 0) r = next++;
        l = r;
    }
    return static_cast<std::size_t>(next);
}

}  // namespace

SegmentMap slic(std::span<const float> image, std::size_t rows, std::size_t cols,
                const SlicConfig& cfg, std::vector<double>* objective) {
    const std::size_t n = rows * cols;
    require(rows > 0 && cols > 0 && image.size() == n, ErrorCode::ShapeMismatch,
            "image has " + std::to_string(image.size()) + " values, expected " +
                std::to_string(rows) + "x" + std::to_string(cols));
    require(cfg.segments >= 1 && cfg.segments <= n, ErrorCode::InvalidArgument,
            "requested " + std::to_string(cfg.segments) + " segments for " + std::to_string(n) +
                " pixels");
    require(cfg.compactness >= 0.0, ErrorCode::InvalidArgument, "compactness must be >= 0");

    const auto [lo_it, hi_it] = std::minmax_element(image.begin(), image.end());
    const double lo = *lo_it, range = static_cast<double>(*hi_it) - lo;
    std::vector<double> intensity(n);
    for (std::size_t p = 0; p < n; ++p)
        intensity[p] = range > 0.0 ? (static_cast<double>(image[p]) - lo) / range : 0.0;

    const std::size_t k = cfg.segments;
    const auto grid_cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
    const std::size_t grid_rows = (k + grid_cols - 1) / grid_cols;
    const double step = std::sqrt(static_cast<double>(n) / static_cast<double>(k));
    const double spatial = cfg.compactness / step;
    const double spatial2 = spatial * spatial;

    std::vector<Center> centers(grid_rows * grid_cols);
    for (std::size_t r = 0; r < grid_rows; ++r) {
        for (std::size_t c = 0; c < grid_cols; ++c) {
            Center& ct = centers[r * grid_cols + c];
            ct.y = (static_cast<double>(r) + 0.5) * static_cast<double>(rows) / grid_rows - 0.5;
            ct.x = (static_cast<double>(c) + 0.5) * static_cast<double>(cols) / grid_cols - 0.5;
            const auto py = std::min(rows - 1, static_cast<std::size_t>(std::max(0.0, std::round(ct.y))));
            const auto px = std::min(cols - 1, static_cast<std::size_t>(std::max(0.0, std::round(ct.x))));
            ct.intensity = intensity[py * cols + px];
        }
    }

    std::vector<int> labels(n);
    for (std::size_t y = 0; y < rows; ++y) {
        const std::size_t gr = std::min(grid_rows - 1, y * grid_rows / rows);
        for (std::size_t x = 0; x < cols; ++x) {
            const std::size_t gc = std::min(grid_cols - 1, x * grid_cols / cols);
            labels[y * cols + x] = static_cast<int>(gr * grid_cols + gc);
        }
    }

    auto dist2 = [&](std::size_t p, const Center& ct) {
        const double di = intensity[p] - ct.intensity;
        const double dy = static_cast<double>(p / cols) - ct.y;
        const double dx = static_cast<double>(p % cols) - ct.x;
        return di * di + spatial2 * (dy * dy + dx * dx);
    };
    std::vector<double> best(n);
    auto refresh = [&] {
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            best[p] = dist2(p, centers[static_cast<std::size_t>(labels[p])]);
            total += best[p];
        }
        return total;
    };
    {
        const double total = refresh();
        if (objective) objective->push_back(total);
    }

    std::vector<double> sum_i(centers.size()), sum_y(centers.size()), sum_x(centers.size());
    std::vector<std::size_t> count(centers.size());
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const Center& ct = centers[c];
            const auto y0 = static_cast<long>(std::ceil(ct.y - step));
            const auto y1 = static_cast<long>(std::floor(ct.y + step));
            const auto x0 = static_cast<long>(std::ceil(ct.x - step));
            const auto x1 = static_cast<long>(std::floor(ct.x + step));
            for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(rows) - 1, y1); ++y) {
                for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(cols) - 1, x1); ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * cols + static_cast<std::size_t>(x);
                    const double d = dist2(p, ct);
                    const int ci = static_cast<int>(c);
                    if (d < best[p] || (d == best[p] && ci < labels[p])) {
                        best[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        if (objective) {
            double total = 0.0;
            for (double d : best) total += d;
            objective->push_back(total);
        }

        std::fill(sum_i.begin(), sum_i.end(), 0.0);
        std::fill(sum_y.begin(), sum_y.end(), 0.0);
        std::fill(sum_x.begin(), sum_x.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t p = 0; p < n; ++p) {
            const auto l = static_cast<std::size_t>(labels[p]);
            sum_i[l] += intensity[p];
            sum_y[l] += static_cast<double>(p / cols);
            sum_x[l] += static_cast<double>(p % cols);
            ++count[l];
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (count[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(count[c]);
            centers[c] = {sum_i[c] * inv, sum_y[c] * inv, sum_x[c] * inv};
        }
        const double total = refresh();
        if (objective) objective->push_back(total);
    }

    enforce_connectivity(labels, rows, cols);
    SegmentMap map;
    map.rows = rows;
    map.cols = cols;
    map.n_segments = relabel_dense(labels);
    map.labels = std::move(labels);
    return map;
}

SegmentMap slic(const Spectrogram& spec, const SlicConfig& cfg, std::vector<double>* objective) {
    return slic(spec.values, spec.freq_bins, spec.time_frames, cfg, objective);
}

std::vector<std::size_t> segment_pixel_counts(const SegmentMap& map) {
    std::vector<std::size_t> counts(map.n_segments, 0);
    for (int l : map.labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
}

std::string encode_pgm(const SegmentMap& map) {
    std::string out = "P5\n" + std::to_string(map.cols) + " " + std::to_string(map.rows) + "\n255\n";
    const double scale = map.n_segments > 1 ? 255.0 / static_cast<double>(map.n_segments - 1) : 0.0;
    for (int l : map.labels)
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(l * scale))));
    return out;
}

void write_pgm(const SegmentMap& map, const std::filesystem::path& path) {
    const std::string bytes = encode_pgm(map);
    write_file_atomic(path, std::span<const char>(bytes.data(), bytes.size()));
}

}  // namespace limeil
