#pragma once

// Desk-scale datasets: 1-D toys with known structure, procedural labeled
// shapes, and a raw-PPM folder loader for user experiments.

#include <string>
#include <vector>

#include "sid/tensor.hpp"

namespace sid {

enum class DatasetKind { TwoGaussians1d, GridBits1d, Shapes16x16, FileFolder };

class ToyDataset {
public:
    static ToyDataset two_gaussians_1d();
    static ToyDataset grid_bits_1d(int n_bits);
    static ToyDataset shapes_16x16();
    static ToyDataset file_folder(const std::string& path);

    DatasetKind kind() const { return kind_; }
    int resolution() const { return resolution_; }
    int channels() const { return channels_; }
    int num_classes() const { return num_classes_; }
    int n_bits() const { return n_bits_; }
    std::string name() const;

    Shape example_shape() const { return {resolution_, resolution_, channels_}; }

    // images in [-1,1], shape [n, res, res, C]; labels empty when unlabeled
    void sample_batch(int64_t n, Rng& rng, Tensor* images, std::vector<int64_t>* labels) const;

    // scalar draws for 1-D kinds (used by distribution metrics)
    std::vector<double> sample_values(int64_t n, Rng& rng) const;

private:
    ToyDataset() = default;
    DatasetKind kind_ = DatasetKind::TwoGaussians1d;
    int resolution_ = 1;
    int channels_ = 1;
    int num_classes_ = 0;
    int n_bits_ = 0;
    std::vector<double> grid_;             // GridBits1d support
    std::vector<std::vector<double>> folder_images_;
    std::string folder_;
};

// 1-Wasserstein distance between two equal-size scalar samples
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

// binary PPM (P6) loader; returns [H, W, 3] in [-1, 1]
Tensor read_ppm(const std::string& path);

}  // namespace sid
