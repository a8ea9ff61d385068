#include "sid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace sid {

ToyDataset ToyDataset::two_gaussians_1d() {
    ToyDataset d;
    d.kind_ = DatasetKind::TwoGaussians1d;
    return d;
}

ToyDataset ToyDataset::grid_bits_1d(int n_bits) {
    if (n_bits < 1 || n_bits > 16) throw ConfigError("grid_bits_1d: n_bits must be in [1,16]");
    ToyDataset d;
    d.kind_ = DatasetKind::GridBits1d;
    d.n_bits_ = n_bits;
    const int64_t count = int64_t(1) << n_bits;
    d.grid_.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        d.grid_[static_cast<size_t>(i)] =
            -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return d;
}

ToyDataset ToyDataset::shapes_16x16() {
    ToyDataset d;
    d.kind_ = DatasetKind::Shapes16x16;
    d.resolution_ = 16;
    d.num_classes_ = 3;
    return d;
}

ToyDataset ToyDataset::file_folder(const std::string& path) {
    ToyDataset d;
    d.kind_ = DatasetKind::FileFolder;
    d.folder_ = path;
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
        if (e.path().extension() == ".ppm") files.push_back(e.path().string());
    }
    if (files.empty()) throw IoError("file_folder: no .ppm files in " + path);
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        Tensor img = read_ppm(f);
        if (d.folder_images_.empty()) {
            d.resolution_ = static_cast<int>(img.dim(0));
            d.channels_ = 3;
        }
        if (img.dim(0) != d.resolution_ || img.dim(1) != d.resolution_) {
            throw IoError("file_folder: " + f + " has mismatched dimensions");
        }
        d.folder_images_.emplace_back(img.data().begin(), img.data().end());
    }
    return d;
}

std::string ToyDataset::name() const {
    switch (kind_) {
        case DatasetKind::TwoGaussians1d:
            return "two_gaussians_1d";
        case DatasetKind::GridBits1d:
            return "grid_bits_1d:" + std::to_string(n_bits_);
        case DatasetKind::Shapes16x16:
            return "shapes_16x16";
        case DatasetKind::FileFolder:
            return "file_folder:" + folder_;
    }
    return "?";
}

std::vector<double> ToyDataset::sample_values(int64_t n, Rng& rng) const {
    std::vector<double> out(static_cast<size_t>(n));
    switch (kind_) {
        case DatasetKind::TwoGaussians1d:
            for (auto& v : out) {
                const double mean = rng.uniform() < 0.5 ? -0.5 : 0.5;
                v = std::min(1.0, std::max(-1.0, mean + 0.1 * rng.normal()));
            }
            break;
        case DatasetKind::GridBits1d:
            for (auto& v : out) v = grid_[static_cast<size_t>(rng.uniform_int(
                                        static_cast<int64_t>(grid_.size())))];
            break;
        default:
            throw ConfigError("sample_values: only 1-D datasets");
    }
    return out;
}

namespace {

void render_shape(std::span<double> img, int res, int cls, Rng& rng) {
    const double cx = rng.uniform(5.0, 11.0);
    const double cy = rng.uniform(5.0, 11.0);
    const double s = rng.uniform(2.5, 5.0);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            bool inside = false;
            const double dx = x - cx, dy = y - cy;
            switch (cls) {
                case 0:  // square
                    inside = std::abs(dx) <= s && std::abs(dy) <= s;
                    break;
                case 1:  // circle
                    inside = dx * dx + dy * dy <= s * s;
                    break;
                case 2:  // upward triangle
                    inside = dy >= -s && dy <= s && std::abs(dx) <= (dy + s) * 0.5;
                    break;
            }
            img[static_cast<size_t>(y * res + x)] = inside ? 1.0 : -1.0;
        }
    }
}

}  // namespace

void ToyDataset::sample_batch(int64_t n, Rng& rng, Tensor* images,
                              std::vector<int64_t>* labels) const {
    labels->clear();
    Shape shape{n, resolution_, resolution_, channels_};
    *images = Tensor::zeros(shape);
    auto d = images->mutable_data();
    switch (kind_) {
        case DatasetKind::TwoGaussians1d:
        case DatasetKind::GridBits1d: {
            auto vals = sample_values(n, rng);
            std::copy(vals.begin(), vals.end(), d.begin());
            break;
        }
        case DatasetKind::Shapes16x16: {
            const int64_t per = static_cast<int64_t>(resolution_) * resolution_;
            for (int64_t i = 0; i < n; ++i) {
                const int cls = static_cast<int>(rng.uniform_int(3));
                labels->push_back(cls);
                render_shape(d.subspan(static_cast<size_t>(i * per), static_cast<size_t>(per)),
                             resolution_, cls, rng);
            }
            break;
        }
        case DatasetKind::FileFolder: {
            const size_t per = folder_images_[0].size();
            for (int64_t i = 0; i < n; ++i) {
                const auto& img =
                    folder_images_[static_cast<size_t>(rng.uniform_int(
                        static_cast<int64_t>(folder_images_.size())))];
                std::copy(img.begin(), img.end(), d.begin() + static_cast<int64_t>(i * per));
            }
            break;
        }
    }
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw DimensionError("wasserstein_1d: samples must be equal-size and non-empty");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

Tensor read_ppm(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) throw IoError("read_ppm: cannot open " + path);
    char magic[3] = {0, 0, 0};
    int w = 0, h = 0, maxval = 0;
    if (std::fscanf(f, "%2s %d %d %d", magic, &w, &h, &maxval) != 4 ||
        std::string(magic) != "P6" || maxval != 255 || w <= 0 || h <= 0) {
        std::fclose(f);
        throw IoError("read_ppm: " + path + " is not an 8-bit P6 file");
    }
    std::fgetc(f);  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    const size_t got = std::fread(raw.data(), 1, raw.size(), f);
    std::fclose(f);
    if (got != raw.size()) throw IoError("read_ppm: truncated " + path);
    std::vector<double> data(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) data[i] = raw[i] / 255.0 * 2.0 - 1.0;
    return Tensor::from_data({h, w, 3}, std::move(data));
}

}  // namespace sid
