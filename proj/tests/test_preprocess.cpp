#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "helpers.hpp"
#include "uqc/image.hpp"
#include "uqc/preprocess.hpp"

using namespace uqc;

namespace {

Image random_image(Rng& rng, int h, int w) {
    Image img(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) img(r, c) = rng.uniform();
    return img;
}

// Straight-line reference for the fuzzy filter: enumerate every candidate
// window, recompute its statistics from scratch, full sort, plain weighted
// mean. No shared code with the implementation beyond reflect_index.
Image ref_fuzzy(const Image& img, const preprocess::FuzzyFilterConfig& cfg, double sigma) {
    const int h = static_cast<int>(img.rows());
    const int w = static_cast<int>(img.cols());
    const int half = cfg.window_side / 2;
    Image out(h, w);

    auto window = [&](int r, int c) {
        std::vector<double> v;
        for (int dr = -half; dr <= half; ++dr)
            for (int dc = -half; dc <= half; ++dc)
                v.push_back(img(reflect_index(r + dr, h), reflect_index(c + dc, w)));
        return v;
    };
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto var_of = [&](const std::vector<double>& v) {
        const double m = mean_of(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size());
    };

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const auto local = window(r, c);
            const double lmean = mean_of(local);
            const double lvar = var_of(local);
            std::vector<std::tuple<double, int, int>> cands;
            for (int jr = std::max(0, r - cfg.search_radius);
                 jr <= std::min(h - 1, r + cfg.search_radius); ++jr)
                for (int jc = std::max(0, c - cfg.search_radius);
                     jc <= std::min(w - 1, c + cfg.search_radius); ++jc) {
                    if (jr == r && jc == c) continue;
                    const auto cand = window(jr, jc);
                    if (std::abs(mean_of(cand) - lmean) >= cfg.mean_tolerance) continue;
                    if (std::abs(var_of(cand) - lvar) >= cfg.var_tolerance) continue;
                    double d2 = 0.0;
                    for (size_t t = 0; t < cand.size(); ++t)
                        d2 += (cand[t] - local[t]) * (cand[t] - local[t]);
                    cands.emplace_back(std::sqrt(d2), jr, jc);
                }
            std::sort(cands.begin(), cands.end());
            double wsum = 1.0;
            double psum = img(r, c);
            const int keep = std::min<int>(cfg.max_matches - 1, static_cast<int>(cands.size()));
            for (int t = 0; t < keep; ++t) {
                const auto& [ds, jr, jc] = cands[t];
                const double wj = std::exp(-ds * ds / (2.0 * sigma * sigma));
                wsum += wj;
                psum += wj * img(jr, jc);
            }
            out(r, c) = clamp01(psum / wsum);
        }
    return out;
}

}  // namespace

TEST_CASE("noise sigma estimator") {
    CHECK(preprocess::estimate_noise_sigma(Image::Constant(16, 16, 0.4)) == 1e-4);

    Rng rng(2);
    Image noise(128, 128);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 128; ++c) {
            noise(r, c) = rng.normal();
            sum += noise(r, c);
            sum2 += noise(r, c) * noise(r, c);
        }
    const double n = 128.0 * 128.0;
    const double sample_sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    const double est = preprocess::estimate_noise_sigma(noise);
    CHECK(std::abs(est - sample_sd) / sample_sd < 0.15);

    // noise on a smooth ramp; the ramp gradient must not inflate the estimate
    Image ramp(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) ramp(r, c) = (r + c) / 256.0 + 0.1 * rng.normal();
    const double ramp_est = preprocess::estimate_noise_sigma(ramp);
    CHECK(ramp_est > 0.07);
    CHECK(ramp_est < 0.13);

    CHECK_THROWS_AS(preprocess::estimate_noise_sigma(Image(0, 0)), std::invalid_argument);
}

TEST_CASE("fuzzy filter equals the exhaustive reference") {
    preprocess::FuzzyFilterConfig cfg;
    cfg.search_radius = 3;
    cfg.max_matches = 4;
    cfg.sigma = 0.1;

    double worst = 0.0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const Image img = random_image(rng, 12, 12);
        const Image got = preprocess::fuzzy_filter(img, cfg);
        const Image want = ref_fuzzy(img, cfg, 0.1);
        worst = std::max(worst, (got - want).abs().maxCoeff());
    }
    CHECK(worst <= 1e-12);

    // the 9x9 configuration with a tighter search region
    cfg.search_radius = 2;
    Rng rng(99);
    const Image img9 = random_image(rng, 9, 9);
    CHECK((preprocess::fuzzy_filter(img9, cfg) - ref_fuzzy(img9, cfg, 0.1)).abs().maxCoeff() <=
          1e-12);
}

TEST_CASE("fuzzy filter constant fixpoint is exact") {
    preprocess::FuzzyFilterConfig cfg;  // defaults, auto sigma
    for (double c : {0.0, 1.0 / 3.0, 0.37123, 1.0}) {
        const Image img = Image::Constant(12, 12, c);
        const Image out = preprocess::fuzzy_filter(img, cfg);
        CHECK((out == img).all());
    }
}

TEST_CASE("fuzzy filter stays in bounds and rejects bad configs") {
    Rng rng(8);
    preprocess::FuzzyFilterConfig cfg;
    cfg.search_radius = 3;
    cfg.sigma = 0.05;
    const Image img = random_image(rng, 12, 12);
    const Image out = preprocess::fuzzy_filter(img, cfg);
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.maxCoeff() <= 1.0);

    preprocess::FuzzyFilterConfig bad = cfg;
    bad.window_side = 4;
    CHECK_THROWS_AS(preprocess::fuzzy_filter(img, bad), std::domain_error);
    bad = cfg;
    bad.window_side = 1;
    CHECK_THROWS_AS(preprocess::fuzzy_filter(img, bad), std::domain_error);
    bad = cfg;
    bad.search_radius = 1;
    CHECK_THROWS_AS(preprocess::fuzzy_filter(img, bad), std::domain_error);
    bad = cfg;
    bad.max_matches = 0;
    CHECK_THROWS_AS(preprocess::fuzzy_filter(img, bad), std::domain_error);
    CHECK_THROWS_AS(preprocess::fuzzy_filter(random_image(rng, 5, 5), cfg), std::domain_error);
}

TEST_CASE("single identical match reproduces the pixel") {
    // period-2 columns: the window two columns over is identical, and with
    // max_matches = 2 it is the only one kept
    Image img(9, 9);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c) img(r, c) = (c % 2 == 0) ? 0.2 : 0.8;
    preprocess::FuzzyFilterConfig cfg;
    cfg.search_radius = 3;
    cfg.max_matches = 2;
    cfg.sigma = 0.1;
    const Image out = preprocess::fuzzy_filter(img, cfg);
    CHECK((out == img).all());
}

TEST_CASE("fuzzy filter reduces gaussian noise variance") {
    preprocess::FuzzyFilterConfig cfg;  // auto sigma, full defaults
    const double sigmas[] = {0.05, 0.1, 0.2};
    int reduced = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        const double s = sigmas[trial % 3];
        Image img(12, 12);
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c) img(r, c) = clamp01(0.5 + s * rng.normal());
        const Image out = preprocess::fuzzy_filter(img, cfg);
        if (image_variance(out) < image_variance(img)) ++reduced;
    }
    CHECK(reduced >= 95);
}

TEST_CASE("sharpen impulse response is the kernel, bit for bit") {
    Image img = Image::Zero(5, 5);
    img(2, 2) = 1.0;
    const Image out = preprocess::sharpen(img, false);
    Image want = Image::Zero(5, 5);
    want(2, 2) = 5.0;
    want(1, 2) = want(3, 2) = want(2, 1) = want(2, 3) = -1.0;
    CHECK((out == want).all());
}

TEST_CASE("sharpen constant fixpoint is exact") {
    for (double c : {0.0, 0.1, 1.0 / 3.0, 0.87654321, 1.0}) {
        const Image img = Image::Constant(7, 9, c);
        CHECK((preprocess::sharpen(img, false) == img).all());
        CHECK((preprocess::sharpen(img, true) == img).all());
    }
}

TEST_CASE("sharpen overshoots a step edge into the clamp") {
    Image img(8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) img(r, c) = c >= 4 ? 1.0 : 0.0;
    const Image raw = preprocess::sharpen(img, false);
    const Image clamped = preprocess::sharpen(img);
    for (int r = 0; r < 8; ++r) {
        CHECK(raw(r, 3) == -1.0);
        CHECK(raw(r, 4) == 2.0);
        CHECK(clamped(r, 3) == 0.0);
        CHECK(clamped(r, 4) == 1.0);
    }
    CHECK_THROWS_AS(preprocess::sharpen(Image::Zero(2, 2)), std::domain_error);
}

TEST_CASE("hflip augmentation") {
    data::Dataset ds;
    ds.name = "t";
    for (int i = 0; i < 10; ++i) {
        data::ImageSample s;
        s.id = "img" + std::to_string(i);
        Rng rng(i);
        s.pixels = random_image(rng, 3, 3);
        s.label = i % 2;
        ds.samples.push_back(std::move(s));
    }
    const auto twice = preprocess::augment_hflip(ds);
    CHECK(twice.size() == 20);

    int flips = 0;
    for (const auto& s : twice.samples)
        if (s.id.size() > 5 && s.id.substr(s.id.size() - 5) == ":flip") ++flips;
    CHECK(flips == 10);

    // involution and label copies
    const auto again = preprocess::augment_hflip(twice);
    for (const auto& s : ds.samples) {
        const auto find = [&](const auto& set, const std::string& id) {
            for (const auto& x : set.samples)
                if (x.id == id) return &x;
            return static_cast<const data::ImageSample*>(nullptr);
        };
        const auto* flipped = find(twice, s.id + ":flip");
        REQUIRE(flipped != nullptr);
        CHECK(flipped->label == s.label);
        const auto* back = find(again, s.id + ":flip:flip");
        REQUIRE(back != nullptr);
        CHECK((back->pixels == s.pixels).all());
    }

    // ids stay sorted
    for (size_t i = 1; i < twice.samples.size(); ++i)
        CHECK(twice.samples[i - 1].id < twice.samples[i].id);

    // hand-checked mirror
    data::Dataset tiny;
    data::ImageSample s;
    s.id = "a";
    s.pixels = Image::Zero(3, 3);
    s.pixels(0, 0) = 1.0;
    tiny.samples.push_back(s);
    const auto out = preprocess::augment_hflip(tiny);
    CHECK(out.samples[1].pixels(0, 2) == 1.0);
    CHECK(out.samples[1].pixels(0, 0) == 0.0);
}

TEST_CASE("standardize") {
    Rng rng(4);
    const Image img = random_image(rng, 16, 16);
    const Image same = preprocess::standardize(img, 16);
    CHECK((same == img).all());

    const Image constant = preprocess::standardize(Image::Constant(10, 14, 0.42), 8);
    CHECK(constant.rows() == 8);
    CHECK(constant.cols() == 8);
    CHECK((constant - 0.42).abs().maxCoeff() <= 1e-12);

    Image two(2, 2);
    two << 0.0, 1.0, 0.0, 1.0;
    const Image up = preprocess::standardize(two, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 1; c < 8; ++c) CHECK(up(r, c) >= up(r, c - 1) - 1e-15);

    const Image big = preprocess::standardize(random_image(rng, 28, 28), 32);
    CHECK(big.minCoeff() >= 0.0);
    CHECK(big.maxCoeff() <= 1.0);

    CHECK_THROWS_AS(preprocess::standardize(img, 4), std::domain_error);
}

TEST_CASE("preprocess pipeline stage toggles") {
    data::Dataset ds;
    for (int i = 0; i < 6; ++i) {
        data::ImageSample s;
        s.id = "s" + std::to_string(i);
        Rng rng(40 + i);
        s.pixels = random_image(rng, 12, 12);
        ds.samples.push_back(std::move(s));
    }
    preprocess::FuzzyFilterConfig fcfg;
    fcfg.sigma = 0.1;

    preprocess::StageFlags off;
    off.fuzzy = off.sharpen = off.hflip = false;
    off.train = true;
    off.side = 8;
    const auto plain = preprocess::preprocess_pipeline(ds, fcfg, off);
    CHECK(plain.size() == 6);
    for (size_t i = 0; i < plain.samples.size(); ++i)
        CHECK((plain.samples[i].pixels == preprocess::standardize(ds.samples[i].pixels, 8)).all());

    preprocess::StageFlags on;
    on.train = true;
    on.side = 8;
    const auto both = preprocess::preprocess_pipeline(ds, fcfg, on);
    CHECK(both.size() == 12);
    for (const auto& s : both.samples) {
        CHECK(s.pixels.rows() == 8);
        CHECK(s.pixels.minCoeff() >= 0.0);
        CHECK(s.pixels.maxCoeff() <= 1.0);
    }

    preprocess::StageFlags eval = on;
    eval.train = false;
    CHECK(preprocess::preprocess_pipeline(ds, fcfg, eval).size() == 6);
}
