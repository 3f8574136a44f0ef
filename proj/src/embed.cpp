#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "uqc/embed.hpp"
#include "uqc/rng.hpp"

namespace uqc::embed {

Eigen::MatrixXd pca(const Eigen::MatrixXd& x, int dims) {
    if (dims < 1) throw std::domain_error("pca needs dims >= 1");
    const int m = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    if (m < 1) throw std::domain_error("pca needs at least one row");
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered / std::max(1, m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca eigendecomposition failed");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, dims);
    const int take = std::min(dims, d);
    for (int c = 0; c < take; ++c) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);  // eigenvalues ascend
        int arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;
        out.col(c) = centered * v;
    }
    return out;
}

Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, uint64_t seed, double perplexity, int iters) {
    const int m = static_cast<int>(x.rows());
    if (m < 4) throw std::domain_error("tsne needs at least four rows");
    if (perplexity <= 1.0 || perplexity >= m)
        throw std::domain_error("perplexity out of range");

    Eigen::MatrixXd d2(m, m);
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    d2 = (norms.replicate(1, m) + norms.transpose().replicate(m, 1) - 2.0 * x * x.transpose())
             .cwiseMax(0.0);

    const double log_perp = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        Eigen::VectorXd row(m);
        for (int iter = 0; iter < 50; ++iter) {
            double sum = 0.0, dot = 0.0;
            for (int j = 0; j < m; ++j) {
                row[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
                sum += row[j];
                dot += row[j] * d2(i, j);
            }
            const double h = std::log(sum) + beta * dot / sum;  // entropy in nats
            const double diff = h - log_perp;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            row[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
            sum += row[j];
        }
        if (sum <= 0.0) throw std::runtime_error("tsne affinity underflow");
        p.row(i) = row.transpose() / sum;
    }
    p = ((p + p.transpose()) / (2.0 * m)).cwiseMax(1e-12).eval();

    Rng rng(seed);
    Eigen::MatrixXd y = pca(x, 2) * 1e-4;
    for (int i = 0; i < m; ++i)
        for (int c = 0; c < 2; ++c) y(i, c) += 1e-8 * rng.normal();

    const int exaggeration_end = std::min(250, iters);
    const double lr = 200.0;
    Eigen::MatrixXd incs = Eigen::MatrixXd::Zero(m, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(m, 2);
    for (int iter = 0; iter < iters; ++iter) {
        const double exaggeration = iter < exaggeration_end ? 12.0 : 1.0;
        const double momentum = iter < 250 ? 0.5 : 0.8;
        Eigen::MatrixXd num(m, m);
        double z = 0.0;
        for (int i = 0; i < m; ++i) {
            num(i, i) = 0.0;
            for (int j = i + 1; j < m; ++j) {
                const double k = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
                num(i, j) = k;
                num(j, i) = k;
                z += 2.0 * k;
            }
        }
        z = std::max(z, 1e-12);
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, 2);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                if (j == i) continue;
                const double q = std::max(num(i, j) / z, 1e-12);
                const double coeff = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
                grad.row(i) += coeff * (y.row(i) - y.row(j));
            }
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < 2; ++c) {
                const bool same = (grad(i, c) > 0.0) == (incs(i, c) > 0.0);
                gains(i, c) = same ? gains(i, c) * 0.8 : gains(i, c) + 0.2;
                gains(i, c) = std::max(gains(i, c), 0.01);
                incs(i, c) = momentum * incs(i, c) - lr * gains(i, c) * grad(i, c);
            }
        y += incs;
        y.rowwise() -= y.colwise().mean();
    }
    return y;
}

namespace {

struct Rgb {
    int r, g, b;
};

const std::vector<Rgb>& palette() {
    static const std::vector<Rgb> p = {
        {31, 119, 180}, {255, 127, 14}, {44, 160, 44},   {214, 39, 40},
        {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
        {188, 189, 34}, {23, 190, 207}, {174, 199, 232}, {255, 187, 120},
    };
    return p;
}

std::string strip_image_ext(const std::string& path) {
    const size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return path;
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == "png" || ext == "svg" || ext == "jpg" || ext == "jpeg" || ext == "bmp")
        return path.substr(0, dot);
    return path;
}

struct PanelMap {
    double xmin, xspan, ymin, yspan;
    int x0, y0, side;
    cv::Point2i to_px(double x, double y) const {
        const double u = (x - xmin) / xspan;
        const double v = (y - ymin) / yspan;
        return {x0 + static_cast<int>(std::lround(u * side)),
                y0 + side - static_cast<int>(std::lround(v * side))};
    }
};

}  // namespace

std::string plot_clusters(const Embedding2D& embedding, const ClusterLabels& labels,
                          const std::vector<int>* truth, const std::string& out_base) {
    const int m = static_cast<int>(embedding.points.rows());
    if (m == 0) throw std::domain_error("nothing to plot");
    if (static_cast<int>(labels.labels.size()) != m)
        throw std::domain_error("label count does not match embedding");
    if (truth && static_cast<int>(truth->size()) != m)
        throw std::domain_error("truth count does not match embedding");

    const int panel = 560, margin = 50, legend_h = 30;
    const int panels = truth ? 2 : 1;
    const int width = panels * (panel + 2 * margin);
    const int height = panel + 2 * margin + legend_h;

    double xmin = embedding.points.col(0).minCoeff(), xmax = embedding.points.col(0).maxCoeff();
    double ymin = embedding.points.col(1).minCoeff(), ymax = embedding.points.col(1).maxCoeff();
    const double xpad = std::max((xmax - xmin) * 0.05, 1e-9);
    const double ypad = std::max((ymax - ymin) * 0.05, 1e-9);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    std::vector<int> truth_values;
    if (truth) {
        truth_values = *truth;
        std::sort(truth_values.begin(), truth_values.end());
        truth_values.erase(std::unique(truth_values.begin(), truth_values.end()),
                           truth_values.end());
    }
    std::map<int, int> truth_color;
    for (size_t i = 0; i < truth_values.size(); ++i)
        truth_color[truth_values[i]] = static_cast<int>(i);

    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    const auto color_of = [&](int idx) { return palette()[idx % palette().size()]; };
    const auto draw_panel = [&](int which, const std::string& title, auto color_index) {
        PanelMap pm{xmin, xmax - xmin, ymin, ymax - ymin,
                    which * (panel + 2 * margin) + margin, margin + legend_h, panel};
        cv::rectangle(canvas, {pm.x0, pm.y0}, {pm.x0 + panel, pm.y0 + panel},
                      cv::Scalar(180, 180, 180), 1);
        svg += "<rect x=\"" + std::to_string(pm.x0) + "\" y=\"" + std::to_string(pm.y0) +
               "\" width=\"" + std::to_string(panel) + "\" height=\"" + std::to_string(panel) +
               "\" fill=\"none\" stroke=\"#b4b4b4\"/>\n";
        cv::putText(canvas, title, {pm.x0, pm.y0 - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    cv::Scalar(40, 40, 40), 1, cv::LINE_AA);
        svg += "<text x=\"" + std::to_string(pm.x0) + "\" y=\"" + std::to_string(pm.y0 - 8) +
               "\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#282828\">" + title +
               "</text>\n";
        for (int i = 0; i < m; ++i) {
            const Rgb c = color_of(color_index(i));
            const cv::Point2i px = pm.to_px(embedding.points(i, 0), embedding.points(i, 1));
            const int radius = which == 0 && labels.raw_labels[i] < 0 ? 2 : 3;
            cv::circle(canvas, px, radius, cv::Scalar(c.b, c.g, c.r), cv::FILLED, cv::LINE_AA);
            svg += "<circle cx=\"" + std::to_string(px.x) + "\" cy=\"" + std::to_string(px.y) +
                   "\" r=\"" + std::to_string(radius) + "\" fill=\"rgb(" + std::to_string(c.r) +
                   "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")\"/>\n";
        }
    };

    draw_panel(0, "clusters", [&](int i) { return labels.labels[i]; });
    if (truth)
        draw_panel(1, "reference labels", [&](int i) { return truth_color[(*truth)[i]]; });

    std::vector<int> counts(std::max(labels.C, 1), 0);
    for (int i = 0; i < m; ++i)
        if (labels.labels[i] >= 0 && labels.labels[i] < labels.C) ++counts[labels.labels[i]];
    int lx = margin;
    for (int c = 0; c < labels.C && c < 12; ++c) {
        const Rgb col = color_of(c);
        cv::rectangle(canvas, {lx, 12}, {lx + 12, 24}, cv::Scalar(col.b, col.g, col.r),
                      cv::FILLED);
        const std::string text = "c" + std::to_string(c) + " (" + std::to_string(counts[c]) + ")";
        cv::putText(canvas, text, {lx + 16, 23}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    cv::Scalar(40, 40, 40), 1, cv::LINE_AA);
        svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"12\" width=\"12\" height=\"12\" fill=\"rgb(" +
               std::to_string(col.r) + "," + std::to_string(col.g) + "," + std::to_string(col.b) +
               ")\"/>\n";
        svg += "<text x=\"" + std::to_string(lx + 16) + "\" y=\"23\" font-family=\"sans-serif\" "
               "font-size=\"12\" fill=\"#282828\">" + text + "</text>\n";
        lx += 16 + 12 * static_cast<int>(text.size()) / 2 + 18;
    }
    svg += "</svg>\n";

    const std::string base = strip_image_ext(out_base);
    const std::string png_path = base + ".png";
    if (!cv::imwrite(png_path, canvas))
        throw std::runtime_error("failed to write " + png_path);
    std::ofstream svg_out(base + ".svg");
    if (!svg_out) throw std::runtime_error("failed to write " + base + ".svg");
    svg_out << svg;
    return png_path;
}

}  // namespace uqc::embed
