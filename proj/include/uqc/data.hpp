#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uqc/image.hpp"

namespace uqc::data {

struct ImageSample {
    std::string id;
    Image pixels;                      // intensities in [0,1], (rows, cols)
    std::optional<int> label;
    std::optional<std::string> source_path;
};

struct Dataset {
    std::vector<ImageSample> samples;
    std::string name;
    std::optional<std::vector<std::string>> class_names;

    size_t size() const { return samples.size(); }
};

struct SplitSpec {
    double train_fraction = 0.9;
    uint64_t seed = 0;
};

// Decodes one image file to [0,1] grayscale (8-bit -> /255, 16-bit -> /65535,
// color -> channel mean). Throws std::runtime_error on unreadable files.
Image load_image_file(const std::string& path);

// Loads every decodable image under `path` (non-recursive), rescaled to [0,1].
// 8-bit -> /255, 16-bit -> /65535, color -> channel mean. Samples sorted by id.
// Optional manifest: delimited text with header `id,filename,label`; labels are
// attached only to rows listed there. Throws std::runtime_error on missing
// path, empty directory ("no images found"), undecodable files, or manifest
// rows naming files that were not loaded.
Dataset load_directory(const std::string& path, const std::optional<std::string>& manifest = std::nullopt);

// Reads IDX images+labels from `root` (train-images-idx3-ubyte[.gz] and
// train-labels-idx1-ubyte[.gz]); gzip and raw files are both accepted.
// Ids are "mnist-%05d" from the file position. If subset_size is set, a
// seeded uniform subsample without replacement is taken, then sorted by id.
Dataset load_mnist(const std::string& root, std::optional<size_t> subset_size = std::nullopt, uint64_t seed = 0);

// Deterministic split: shuffles the id-sorted sample list with the spec seed,
// takes floor(train_fraction*M + 0.5) for train, and re-sorts both halves by
// id. Throws std::domain_error when train_fraction is outside (0,1].
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

}  // namespace uqc::data
