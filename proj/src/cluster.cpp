#include "uqc/cluster.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "uqc/rng.hpp"

namespace uqc::cluster {

namespace {

double sq_dist(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return (a - b).squaredNorm();
}

struct KmeansRun {
    Eigen::MatrixXd centroids;
    std::vector<int> labels;
    double inertia = std::numeric_limits<double>::infinity();
};

KmeansRun lloyd_once(const Eigen::MatrixXd& pts, int k, Rng& rng) {
    const int m = static_cast<int>(pts.rows());
    // k-means++ seeding
    Eigen::MatrixXd cent(k, pts.cols());
    cent.row(0) = pts.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<size_t>(m))));
    Eigen::VectorXd d2 = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        for (int i = 0; i < m; ++i)
            d2[i] = std::min(d2[i], sq_dist(pts.row(i), cent.row(c - 1)));
        const double total = d2.sum();
        int pick = m - 1;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < m; ++i) {
                acc += d2[i];
                if (u < acc) { pick = i; break; }
            }
        } else {
            pick = static_cast<int>(rng.uniform_index(static_cast<size_t>(m)));
        }
        cent.row(c) = pts.row(pick);
    }

    KmeansRun run;
    run.labels.assign(m, -1);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (int i = 0; i < m; ++i) {
            int best = 0;
            double bd = sq_dist(pts.row(i), cent.row(0));
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(pts.row(i), cent.row(c));
                if (d < bd) { bd = d; best = c; }
            }
            if (run.labels[i] != best) { run.labels[i] = best; changed = true; }
        }
        if (!changed && iter > 0) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, pts.cols());
        std::vector<int> counts(k, 0);
        for (int i = 0; i < m; ++i) {
            sums.row(run.labels[i]) += pts.row(i);
            ++counts[run.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                cent.row(c) = sums.row(c) / counts[c];
            } else {
                // deterministic empty-cluster fix: grab the point farthest
                // from its current centroid
                int far = 0;
                double fd = -1.0;
                for (int i = 0; i < m; ++i) {
                    const double d = sq_dist(pts.row(i), cent.row(run.labels[i]));
                    if (d > fd) { fd = d; far = i; }
                }
                cent.row(c) = pts.row(far);
                run.labels[far] = c;
            }
        }
    }
    run.inertia = 0.0;
    for (int i = 0; i < m; ++i) run.inertia += sq_dist(pts.row(i), cent.row(run.labels[i]));
    run.centroids = cent;
    return run;
}

}  // namespace

std::pair<Centroids, std::vector<int>> kmeans(const Eigen::MatrixXd& points, int K, uint64_t seed) {
    if (points.rows() < K) throw std::domain_error("fewer points than clusters");
    if (K < 1) throw std::domain_error("K must be >= 1");
    Rng rng(seed);
    KmeansRun best;
    for (int restart = 0; restart < 20; ++restart) {
        KmeansRun run = lloyd_once(points, K, rng);
        if (run.inertia < best.inertia) best = std::move(run);
    }
    return {Centroids{best.centroids}, best.labels};
}

Centroids init_centroids(const Eigen::MatrixXd& latents, int K, uint64_t seed) {
    return kmeans(latents, K, seed).first;
}

SoftAssignment soft_assign(const Eigen::MatrixXd& latents, const Centroids& centroids) {
    if (latents.cols() != centroids.mu.cols()) throw std::domain_error("latent dimension mismatch");
    const int m = static_cast<int>(latents.rows());
    const int k = centroids.K();
    SoftAssignment out;
    out.yp.resize(m, k);
    for (int i = 0; i < m; ++i) {
        for (int c = 0; c < k; ++c)
            out.yp(i, c) = 1.0 / (1.0 + sq_dist(latents.row(i), centroids.mu.row(c)));
        out.yp.row(i) /= out.yp.row(i).sum();
    }
    return out;
}

Eigen::MatrixXd target_distribution(const Eigen::MatrixXd& yp) {
    const Eigen::VectorXd f = yp.colwise().sum();
    for (Eigen::Index c = 0; c < f.size(); ++c)
        if (f[c] <= 0.0)
            throw std::runtime_error("degenerate cluster " + std::to_string(c) + " (zero soft frequency)");
    Eigen::MatrixXd yt = yp.array().square().matrix();
    for (Eigen::Index c = 0; c < f.size(); ++c) yt.col(c) /= f[c];
    for (Eigen::Index i = 0; i < yt.rows(); ++i) yt.row(i) /= yt.row(i).sum();
    return yt;
}

double clustering_loss(const Eigen::MatrixXd& yt, const Eigen::MatrixXd& yp) {
    if (yt.rows() != yp.rows() || yt.cols() != yp.cols())
        throw std::domain_error("clustering_loss: shape mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < yt.rows(); ++i)
        for (Eigen::Index c = 0; c < yt.cols(); ++c) {
            const double t = yt(i, c);
            if (t <= 0.0) continue;
            const double q = yp(i, c);
            if (q <= 0.0) throw std::overflow_error("clustering_loss: infinite KL (yp=0 where yt>0)");
            total += t * std::log(t / q);
        }
    return total / static_cast<double>(yt.rows());
}

double joint_loss(const vae::VaeLossParts& vae_parts, double lc, double gamma) {
    if (gamma < 0.0) throw std::domain_error("gamma must be >= 0");
    return vae_parts.total + gamma * lc;
}

Eigen::MatrixXd clustering_grads(const Eigen::MatrixXd& z, const Centroids& centroids,
                                 const Eigen::MatrixXd& yt, double gamma, Eigen::MatrixXd& dmu) {
    const int m = static_cast<int>(z.rows());
    const int k = centroids.K();
    const double scale = gamma / static_cast<double>(m);
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(m, z.cols());
    if (dmu.rows() != k || dmu.cols() != z.cols()) dmu = Eigen::MatrixXd::Zero(k, z.cols());
    for (int i = 0; i < m; ++i) {
        Eigen::VectorXd s(k);
        for (int c = 0; c < k; ++c) s[c] = 1.0 / (1.0 + sq_dist(z.row(i), centroids.mu.row(c)));
        const double S = s.sum();
        for (int c = 0; c < k; ++c) {
            const double q = s[c] / S;
            const Eigen::RowVectorXd diff = z.row(i) - centroids.mu.row(c);
            const Eigen::RowVectorXd g = 2.0 * scale * s[c] * (yt(i, c) - q) * diff;
            dz.row(i) += g;
            dmu.row(c) -= g;
        }
    }
    return dz;
}

std::vector<FinetuneEpoch> finetune(vae::VaeModel& model, Centroids& centroids,
                                    const data::Dataset& train, const TrainConfig& cfg) {
    cfg.validate();
    if (train.samples.empty()) throw std::invalid_argument("finetune: empty training set");
    if (centroids.mu.cols() != model.latent_dim()) throw std::domain_error("centroid dimension mismatch");
    if (cfg.epochs_max == 0) return {};

    nn::OptimizerConfig ocfg;
    ocfg.kind = cfg.optimizer;
    ocfg.lr = cfg.lr;
    nn::Optimizer opt(ocfg);

    nn::Param centroid_param("dec.centroids", centroids.mu.size());
    Eigen::Map<Eigen::MatrixXd>(centroid_param.value.data(), centroids.mu.rows(), centroids.mu.cols()) =
        centroids.mu;
    auto params = model.params();
    params.push_back(&centroid_param);

    Rng order_rng(cfg.seed);
    Rng sampler(cfg.seed ^ 0x94d049bb133111ebULL);

    const size_t m = train.samples.size();
    const int k = centroids.K();
    std::vector<size_t> idx(m);
    for (size_t i = 0; i < m; ++i) idx[i] = i;

    const auto current_centroids = [&]() {
        return Centroids{Eigen::Map<const Eigen::MatrixXd>(centroid_param.value.data(), k, model.latent_dim())};
    };

    std::vector<FinetuneEpoch> history;
    EarlyStopper stopper(cfg.min_rel_improvement, cfg.patience);
    for (int epoch = 0; epoch < cfg.epochs_max; ++epoch) {
        // full-set soft assignment from mu-latents; target frozen for the epoch
        Eigen::MatrixXd mu_latents(m, model.latent_dim());
        for (size_t start = 0; start < m; start += 256) {
            const size_t end = std::min(m, start + 256);
            std::vector<const Image*> imgs;
            for (size_t i = start; i < end; ++i) imgs.push_back(&train.samples[i].pixels);
            const vae::LatentBatch code = model.encode(vae::to_tensor(imgs, model.side()), nullptr);
            mu_latents.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
                code.mu;
        }
        Eigen::MatrixXd yt_full;
        try {
            yt_full = target_distribution(soft_assign(mu_latents, current_centroids()).yp);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("finetune aborted at epoch " + std::to_string(epoch) + ": " + e.what());
        }

        order_rng.shuffle(idx);
        FinetuneEpoch acc;
        size_t seen = 0;
        for (size_t start = 0; start < m; start += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(m, start + static_cast<size_t>(cfg.batch));
            const int bsz = static_cast<int>(end - start);
            std::vector<const Image*> imgs;
            Eigen::MatrixXd yt_batch(bsz, k);
            for (size_t i = start; i < end; ++i) {
                imgs.push_back(&train.samples[idx[i]].pixels);
                yt_batch.row(static_cast<Eigen::Index>(i - start)) = yt_full.row(static_cast<Eigen::Index>(idx[i]));
            }
            const nn::Tensor x = vae::to_tensor(imgs, model.side());

            nn::Optimizer::zero_grad(params);
            const vae::VaeLossParts parts = model.train_forward(x, sampler);
            const Centroids cents = current_centroids();
            const Eigen::MatrixXd z = model.last_code().z;
            const double lc = clustering_loss(yt_batch, soft_assign(z, cents).yp);
            const double joint = joint_loss(parts, lc, cfg.gamma);
            if (!std::isfinite(joint))
                throw std::runtime_error("finetune diverged (non-finite loss) at epoch " + std::to_string(epoch));

            Eigen::MatrixXd dmu = Eigen::MatrixXd::Zero(k, model.latent_dim());
            const Eigen::MatrixXd dz_extra = clustering_grads(z, cents, yt_batch, cfg.gamma, dmu);
            model.train_backward(&dz_extra);
            Eigen::Map<Eigen::MatrixXd>(centroid_param.grad.data(), k, model.latent_dim()) += dmu;
            opt.step(params);

            const double w = static_cast<double>(bsz);
            acc.lv += parts.total * w;
            acc.lc += lc * w;
            acc.total += joint * w;
            seen += end - start;
        }
        acc.lv /= static_cast<double>(seen);
        acc.lc /= static_cast<double>(seen);
        acc.total /= static_cast<double>(seen);
        history.push_back(acc);
        if (stopper.feed(acc.total)) break;
    }

    centroids.mu = Eigen::Map<const Eigen::MatrixXd>(centroid_param.value.data(), k, model.latent_dim());
    model.sync_prior();
    return history;
}

}  // namespace uqc::cluster
