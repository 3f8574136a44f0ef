#include "uqc/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <zlib.h>

#include "uqc/rng.hpp"

namespace fs = std::filesystem;

namespace uqc::data {

namespace {

Image mat_to_image(const cv::Mat& m, const std::string& file) {
    cv::Mat gray;
    const int depth = m.depth();
    const double scale = depth == CV_16U ? 65535.0 : 255.0;
    if (m.channels() == 1) {
        gray = m;
    } else {
        // luminance by plain channel average
        std::vector<cv::Mat> ch;
        cv::split(m, ch);
        cv::Mat acc = cv::Mat::zeros(m.rows, m.cols, CV_64F);
        for (auto& c : ch) {
            cv::Mat cd;
            c.convertTo(cd, CV_64F);
            acc += cd;
        }
        acc /= static_cast<double>(ch.size());
        Image out(m.rows, m.cols);
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c) out(r, c) = acc.at<double>(r, c) / scale;
        return out;
    }
    Image out(gray.rows, gray.cols);
    if (depth == CV_8U) {
        for (int r = 0; r < gray.rows; ++r)
            for (int c = 0; c < gray.cols; ++c) out(r, c) = gray.at<uint8_t>(r, c) / 255.0;
    } else if (depth == CV_16U) {
        for (int r = 0; r < gray.rows; ++r)
            for (int c = 0; c < gray.cols; ++c) out(r, c) = gray.at<uint16_t>(r, c) / 65535.0;
    } else {
        throw std::runtime_error("unsupported bit depth in " + file);
    }
    return out;
}

void sort_by_id(Dataset& d) {
    std::sort(d.samples.begin(), d.samples.end(),
              [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',' || c == ';' || c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<uint8_t> read_maybe_gz(const std::string& path) {
    // gzopen reads both gzip and plain files
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 20);
    int n;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    gzclose(f);
    if (n < 0) throw std::runtime_error("decompression failed for " + path);
    return out;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off) {
    return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

std::string find_idx(const std::string& root, const std::string& stem) {
    for (const char* suffix : {"", ".gz"}) {
        const fs::path p = fs::path(root) / (stem + suffix);
        if (fs::exists(p)) return p.string();
    }
    throw std::runtime_error("missing MNIST file " + stem + " under " + root);
}

}  // namespace

Image load_image_file(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot decode image: " + path);
    return mat_to_image(m, path);
}

Dataset load_directory(const std::string& path, const std::optional<std::string>& manifest) {
    if (!fs::exists(path) || !fs::is_directory(path))
        throw std::runtime_error("directory not found: " + path);

    static const std::set<std::string> kExts = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"};
    Dataset ds;
    ds.name = fs::path(path).filename().string();
    std::map<std::string, size_t> by_filename;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (!kExts.count(ext)) continue;
        cv::Mat m = cv::imread(entry.path().string(), cv::IMREAD_UNCHANGED);
        if (m.empty()) throw std::runtime_error("cannot decode image: " + entry.path().string());
        ImageSample s;
        s.id = entry.path().stem().string();
        s.pixels = mat_to_image(m, entry.path().string());
        s.source_path = entry.path().string();
        by_filename[entry.path().filename().string()] = ds.samples.size();
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw std::runtime_error("no images found in " + path);

    if (manifest) {
        std::ifstream in(*manifest);
        if (!in) throw std::runtime_error("cannot open manifest: " + *manifest);
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto cols = split_csv_line(line);
            if (header) {
                header = false;
                if (!cols.empty() && cols[0] == "id") continue;  // header row optional
            }
            if (cols.size() < 2) throw std::runtime_error("malformed manifest row: " + line);
            auto it = by_filename.find(cols[1]);
            if (it == by_filename.end())
                throw std::runtime_error("manifest references missing file: " + cols[1]);
            ds.samples[it->second].id = cols[0];
            if (cols.size() >= 3 && !cols[2].empty())
                ds.samples[it->second].label = std::stoi(cols[2]);
        }
    }
    sort_by_id(ds);
    std::set<std::string> ids;
    for (const auto& s : ds.samples)
        if (!ids.insert(s.id).second) throw std::runtime_error("duplicate sample id: " + s.id);
    return ds;
}

Dataset load_mnist(const std::string& root, std::optional<size_t> subset_size, uint64_t seed) {
    const auto img_bytes = read_maybe_gz(find_idx(root, "train-images-idx3-ubyte"));
    const auto lbl_bytes = read_maybe_gz(find_idx(root, "train-labels-idx1-ubyte"));
    if (img_bytes.size() < 16 || be32(img_bytes, 0) != 2051)
        throw std::runtime_error("malformed IDX image header");
    if (lbl_bytes.size() < 8 || be32(lbl_bytes, 0) != 2049)
        throw std::runtime_error("malformed IDX label header");
    const size_t n = be32(img_bytes, 4);
    const size_t rows = be32(img_bytes, 8);
    const size_t cols = be32(img_bytes, 12);
    if (be32(lbl_bytes, 4) != n) throw std::runtime_error("IDX image/label count mismatch");
    if (img_bytes.size() < 16 + n * rows * cols || lbl_bytes.size() < 8 + n)
        throw std::runtime_error("IDX payload truncated");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    if (subset_size && *subset_size < n) {
        Rng rng(seed);
        rng.shuffle(order);
        order.resize(*subset_size);
        std::sort(order.begin(), order.end());
    }

    Dataset ds;
    ds.name = "mnist";
    ds.samples.reserve(order.size());
    for (size_t idx : order) {
        ImageSample s;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "mnist-%05zu", idx);
        s.id = buf;
        s.pixels = Image(rows, cols);
        const size_t base = 16 + idx * rows * cols;
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) s.pixels(r, c) = img_bytes[base + r * cols + c] / 255.0;
        s.label = static_cast<int>(lbl_bytes[8 + idx]);
        ds.samples.push_back(std::move(s));
    }
    sort_by_id(ds);
    return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
        throw std::domain_error("train_fraction must be in (0,1]");
    if (dataset.samples.empty()) throw std::invalid_argument("cannot split an empty dataset");

    std::vector<size_t> order(dataset.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    // the dataset is kept id-sorted by the loaders; enforce anyway so the split
    // depends only on (ids, seed)
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return dataset.samples[a].id < dataset.samples[b].id;
    });
    Rng rng(spec.seed);
    rng.shuffle(order);

    const size_t m = dataset.samples.size();
    const auto n_train = static_cast<size_t>(std::floor(spec.train_fraction * static_cast<double>(m) + 0.5));

    Dataset train, test;
    train.name = dataset.name + ":train";
    test.name = dataset.name + ":test";
    train.class_names = dataset.class_names;
    test.class_names = dataset.class_names;
    for (size_t i = 0; i < m; ++i)
        (i < n_train ? train : test).samples.push_back(dataset.samples[order[i]]);
    sort_by_id(train);
    sort_by_id(test);
    return {std::move(train), std::move(test)};
}

}  // namespace uqc::data
