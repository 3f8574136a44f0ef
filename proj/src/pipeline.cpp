#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "uqc/cluster.hpp"
#include "uqc/pipeline.hpp"
#include "uqc/preprocess.hpp"
#include "uqc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace uqc::pipeline {

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int encode_chunk_for(int side) {
    if (side <= 32) return 256;
    if (side <= 64) return 128;
    if (side <= 128) return 32;
    return 8;
}

std::optional<std::vector<int>> truth_labels(const data::Dataset& ds) {
    std::vector<int> truth;
    truth.reserve(ds.size());
    for (const auto& s : ds.samples) {
        if (!s.label) return std::nullopt;
        truth.push_back(*s.label);
    }
    return truth;
}

json snapshot_json(const Snapshot& s) {
    json j;
    j["stage"] = s.stage;
    j["has_truth"] = s.has_truth;
    j["ari"] = s.has_truth ? json(s.scores.ari) : json(nullptr);
    j["ami"] = s.has_truth ? json(s.scores.ami) : json(nullptr);
    j["nmi"] = s.has_truth ? json(s.scores.nmi) : json(nullptr);
    j["acc"] = s.has_truth ? json(s.scores.acc) : json(nullptr);
    j["silhouette"] = s.scores.silhouette ? json(*s.scores.silhouette) : json(nullptr);
    j["ssim"] = s.scores.ssim ? json(*s.scores.ssim) : json(nullptr);
    j["mse"] = s.scores.mse ? json(*s.scores.mse) : json(nullptr);
    j["discovered_clusters"] = s.discovered_clusters;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

vae::PriorSpec make_prior(const config::RunConfig& cfg) {
    if (cfg.vae.prior == "mixture")
        return vae::PriorSpec::gaussian_mixture(cfg.prior_components(), cfg.vae.latent,
                                                cfg.run.seed);
    return vae::PriorSpec::standard_normal();
}

}  // namespace

Eigen::MatrixXd label_centroids_2d(const Eigen::MatrixXd& coords, const std::vector<int>& labels,
                                   int C) {
    Eigen::MatrixXd cen = Eigen::MatrixXd::Zero(C, 2);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(C);
    for (size_t i = 0; i < labels.size(); ++i) {
        cen.row(labels[i]) += coords.row(static_cast<Eigen::Index>(i));
        count[labels[i]] += 1.0;
    }
    for (int c = 0; c < C; ++c)
        if (count[c] > 0.0) cen.row(c) /= count[c];
    return cen;
}

data::Dataset load_dataset(const config::DataSpec& spec, uint64_t seed) {
    if (spec.kind == "mnist") {
        std::optional<size_t> subset;
        if (spec.subsample > 0) subset = spec.subsample;
        return data::load_mnist(spec.path, subset, seed);
    }
    std::optional<std::string> manifest;
    if (!spec.manifest.empty()) manifest = spec.manifest;
    data::Dataset ds = data::load_directory(spec.path, manifest);
    if (spec.subsample > 0 && spec.subsample < ds.size()) {
        Rng rng(seed);
        rng.shuffle(ds.samples);
        ds.samples.resize(spec.subsample);
        std::sort(ds.samples.begin(), ds.samples.end(),
                  [](const auto& a, const auto& b) { return a.id < b.id; });
    }
    return ds;
}

data::Dataset preprocess_dataset(const data::Dataset& ds, const config::PreprocessSpec& spec,
                                 bool train) {
    preprocess::FuzzyFilterConfig fcfg;
    preprocess::StageFlags flags;
    flags.fuzzy = spec.fuzzy;
    flags.sharpen = spec.sharpen;
    flags.hflip = spec.hflip;
    flags.train = train;
    flags.side = spec.side;
    return preprocess::preprocess_pipeline(ds, fcfg, flags);
}

Eigen::MatrixXd encode_dataset(vae::VaeModel& model, const data::Dataset& ds) {
    const int m = static_cast<int>(ds.size());
    Eigen::MatrixXd latents(m, model.latent_dim());
    const int chunk = encode_chunk_for(model.side());
    for (int start = 0; start < m; start += chunk) {
        const int n = std::min(chunk, m - start);
        std::vector<const Image*> ptrs(n);
        for (int i = 0; i < n; ++i) ptrs[i] = &ds.samples[start + i].pixels;
        const nn::Tensor x = vae::to_tensor(ptrs, model.side());
        latents.middleRows(start, n) = model.encode(x, nullptr).mu;
    }
    return latents;
}

Snapshot evaluate_snapshot(vae::VaeModel& model, const data::Dataset& test,
                           const config::EmbedSpec& espec, uint64_t seed, const std::string& stage,
                           embed::Embedding2D* out_embedding, embed::ClusterLabels* out_labels) {
    Snapshot snap;
    snap.stage = stage;

    const Eigen::MatrixXd latents = encode_dataset(model, test);
    const int m = static_cast<int>(latents.rows());

    embed::ReduceConfig rcfg;
    rcfg.n_neighbors = std::min(espec.n_neighbors, std::max(2, m - 1));
    rcfg.min_dist = espec.min_dist;
    rcfg.n_epochs = espec.n_epochs;
    rcfg.seed = seed;
    std::vector<std::string> ids;
    ids.reserve(test.size());
    for (const auto& s : test.samples) ids.push_back(s.id);
    embed::Embedding2D emb = embed::reduce(latents, rcfg, std::move(ids));

    embed::HdbscanConfig hcfg;
    hcfg.min_cluster_size = espec.min_cluster_size;
    embed::ClusterLabels labels = embed::assign_labels(emb, hcfg);
    snap.discovered_clusters = labels.C;

    const auto truth = truth_labels(test);
    if (truth) {
        snap.has_truth = true;
        snap.scores.ari = metrics::ari(*truth, labels.labels);
        snap.scores.ami = metrics::ami(*truth, labels.labels);
        snap.scores.nmi = metrics::nmi(*truth, labels.labels);
        snap.scores.acc = metrics::acc(*truth, labels.labels);
    }
    if (labels.C >= 2 && m >= 3)
        snap.scores.silhouette = metrics::silhouette(emb.points, labels.labels);

    // reconstruction quality on a capped sample
    const int n_recon = std::min(m, 256);
    const int chunk = encode_chunk_for(model.side());
    double ssim_sum = 0.0, mse_sum = 0.0;
    for (int start = 0; start < n_recon; start += chunk) {
        const int n = std::min(chunk, n_recon - start);
        std::vector<const Image*> ptrs(n);
        for (int i = 0; i < n; ++i) ptrs[i] = &test.samples[start + i].pixels;
        const nn::Tensor x = vae::to_tensor(ptrs, model.side());
        const nn::Tensor xhat = model.decode(model.encode(x, nullptr).mu);
        for (int i = 0; i < n; ++i) {
            const Image& orig = test.samples[start + i].pixels;
            const Image rec = vae::from_tensor(xhat, i, static_cast<int>(orig.rows()),
                                               static_cast<int>(orig.cols()));
            ssim_sum += metrics::ssim(orig, rec);
            mse_sum += metrics::mse(orig, rec);
        }
    }
    if (n_recon > 0) {
        snap.scores.ssim = ssim_sum / n_recon;
        snap.scores.mse = mse_sum / n_recon;
    }

    if (out_embedding) *out_embedding = std::move(emb);
    if (out_labels) *out_labels = std::move(labels);
    return snap;
}

std::string RunReport::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["config_hash"] = config_hash;
    j["run_id"] = run_id;
    j["failed"] = failed;
    j["failed_stage"] = failed ? json(failed_stage) : json(nullptr);
    j["diagnostic"] = failed ? json(diagnostic) : json(nullptr);
    j["stages"] = json::array();
    for (const auto& s : stages)
        j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}, {"ok", s.ok}});
    j["snapshots"] = json::object();
    for (const auto& s : snapshots) j["snapshots"][s.stage] = snapshot_json(s);
    j["artifacts"] = json::object();
    for (const auto& [k, v] : artifacts) j["artifacts"][k] = v;
    // slots for the clinical benchmarks that need the private ultrasound data
    j["unavailable_benchmarks"] = {
        {"note", "requires the private clinical ultrasound dataset; kept null"},
        {"ultrasound_reconstruction", nullptr},
        {"ultrasound_clustering", nullptr},
        {"ultrasound_silhouette_sweep", nullptr},
        {"ultrasound_acc_vs_k", nullptr},
    };
    return j.dump(2) + "\n";
}

RunReport run_pipeline(const config::RunConfig& cfg) {
    cfg.validate();
    const std::string out = cfg.run.out_dir;
    fs::create_directories(out);

    RunReport report;
    report.config_hash = config::config_hash(cfg);
    report.run_id = config::run_id(cfg);
    const uint64_t hash_bits = config::fnv1a64(config::canonical_ini(cfg));

    write_text(out + "/config.ini", config::canonical_ini(cfg));
    report.artifacts["config"] = out + "/config.ini";

    const auto stage = [&](const std::string& name, auto&& body) {
        if (report.failed) return;
        const auto t0 = std::chrono::steady_clock::now();
        StageResult res;
        res.name = name;
        try {
            body();
        } catch (const std::exception& e) {
            res.ok = false;
            report.failed = true;
            report.failed_stage = name;
            report.diagnostic = e.what();
        }
        res.seconds = seconds_since(t0);
        report.stages.push_back(res);
    };

    data::Dataset train_raw, test_raw, train, test;
    stage("data", [&] {
        data::Dataset full = load_dataset(cfg.data, cfg.run.seed);
        data::SplitSpec split_spec;
        split_spec.train_fraction = cfg.data.train_fraction;
        split_spec.seed = cfg.run.seed;
        std::tie(train_raw, test_raw) = data::split(full, split_spec);
    });

    stage("preprocess", [&] {
        train = preprocess_dataset(train_raw, cfg.preprocess, true);
        test = preprocess_dataset(test_raw, cfg.preprocess, false);
    });

    std::unique_ptr<vae::VaeModel> model;
    stage("init", [&] {
        model = std::make_unique<vae::VaeModel>(cfg.preprocess.side, cfg.vae.latent,
                                                make_prior(cfg), cfg.run.seed, cfg.vae.widths);
    });

    long long pretrain_steps = 0;
    stage("pretrain", [&] {
        if (!cfg.run.pretrain || cfg.vae.epochs == 0) return;
        const TrainConfig tc = cfg.vae_train_config();
        nn::OptimizerConfig oc;
        oc.kind = tc.optimizer;
        oc.lr = tc.lr;
        nn::Optimizer opt(oc);
        const auto history = vae::pretrain(*model, train, tc, &opt);
        pretrain_steps = opt.t();
        std::string lines;
        for (size_t e = 0; e < history.size(); ++e) {
            json row = {{"epoch", e + 1},
                        {"reconstruction", history[e].reconstruction},
                        {"kl", history[e].kl},
                        {"total", history[e].total}};
            lines += row.dump() + "\n";
        }
        write_text(out + "/pretrain_history.jsonl", lines);
        report.artifacts["pretrain_history"] = out + "/pretrain_history.jsonl";
        checkpoint::save_checkpoint(out + "/pretrain.uqc", *model, nullptr, "pretrain",
                                    static_cast<int>(history.size()), pretrain_steps, hash_bits,
                                    cfg.preprocess.fuzzy, cfg.preprocess.sharpen);
        report.artifacts["checkpoint_pretrain"] = out + "/pretrain.uqc";
    });

    stage("evaluate_pretrain", [&] {
        embed::Embedding2D emb;
        embed::ClusterLabels labels;
        report.snapshots.push_back(evaluate_snapshot(*model, test, cfg.embed, cfg.run.seed,
                                                     "post_pretrain", &emb, &labels));
        const auto truth = truth_labels(test);
        const std::string png = embed::plot_clusters(emb, labels, truth ? &*truth : nullptr,
                                                     out + "/embedding_pretrain");
        report.artifacts["plot_pretrain_png"] = png;
        report.artifacts["plot_pretrain_svg"] = out + "/embedding_pretrain.svg";
    });

    cluster::Centroids centroids;
    stage("finetune", [&] {
        const TrainConfig tc = cfg.cluster_train_config();
        const Eigen::MatrixXd train_latents = encode_dataset(*model, train);
        centroids = cluster::init_centroids(train_latents, cfg.cluster.k, cfg.run.seed);
        const auto history = cluster::finetune(*model, centroids, train, tc);
        std::string lines;
        for (size_t e = 0; e < history.size(); ++e) {
            json row = {{"epoch", e + 1},
                        {"lv", history[e].lv},
                        {"lc", history[e].lc},
                        {"total", history[e].total}};
            lines += row.dump() + "\n";
        }
        write_text(out + "/finetune_history.jsonl", lines);
        report.artifacts["finetune_history"] = out + "/finetune_history.jsonl";
        checkpoint::save_checkpoint(out + "/finetune.uqc", *model, &centroids.mu, "finetune",
                                    static_cast<int>(history.size()), 0, hash_bits,
                                    cfg.preprocess.fuzzy, cfg.preprocess.sharpen);
        report.artifacts["checkpoint_finetune"] = out + "/finetune.uqc";
    });

    stage("evaluate_finetune", [&] {
        embed::Embedding2D emb;
        embed::ClusterLabels labels;
        report.snapshots.push_back(evaluate_snapshot(*model, test, cfg.embed, cfg.run.seed,
                                                     "post_finetune", &emb, &labels));
        const auto truth = truth_labels(test);
        const std::string png = embed::plot_clusters(emb, labels, truth ? &*truth : nullptr,
                                                     out + "/embedding_finetune");
        report.artifacts["plot_finetune_png"] = png;
        report.artifacts["plot_finetune_svg"] = out + "/embedding_finetune.svg";

        checkpoint::Sidecar sc;
        sc.config_hash = hash_bits;
        sc.latents = encode_dataset(*model, test);
        sc.coords = emb.points;
        sc.labels = labels.labels;
        sc.centroids2d = label_centroids_2d(emb.points, labels.labels, labels.C);
        sc.n_neighbors = cfg.embed.n_neighbors;
        const std::string sc_path = checkpoint::sidecar_path(out + "/finetune.uqc");
        checkpoint::save_sidecar(sc_path, sc);
        report.artifacts["sidecar"] = sc_path;
    });

    // manifest check: a report must not reference artifacts that are missing
    for (const auto& [name, path] : report.artifacts) {
        if (!fs::exists(path) && !report.failed) {
            report.failed = true;
            report.failed_stage = "report";
            report.diagnostic = "missing artifact " + name + ": " + path;
        }
    }
    write_text(out + "/report.json", report.to_json());
    return report;
}

std::vector<RunReport> run_ablation(const config::RunConfig& base) {
    base.validate();
    struct Cell {
        const char* name;
        bool pt, pp;
    };
    const Cell cells[4] = {{"pt_pp", true, true},
                           {"pt_only", true, false},
                           {"pp_only", false, true},
                           {"none", false, false}};
    std::vector<RunReport> reports;
    json table = json::array();
    for (const Cell& cell : cells) {
        config::RunConfig cfg = base;
        cfg.run.out_dir = base.run.out_dir + "/ablate_" + cell.name;
        cfg.run.pretrain = cell.pt;
        if (!cell.pp) {
            cfg.preprocess.fuzzy = false;
            cfg.preprocess.sharpen = false;
            cfg.preprocess.hflip = false;
        }
        RunReport report = run_pipeline(cfg);
        json row = {{"cell", cell.name}, {"pretraining", cell.pt}, {"preprocessing", cell.pp}};
        row["acc"] = nullptr;
        row["nmi"] = nullptr;
        row["ari"] = nullptr;
        row["ami"] = nullptr;
        for (const auto& s : report.snapshots)
            if (s.stage == "post_finetune" && s.has_truth) {
                row["acc"] = s.scores.acc;
                row["nmi"] = s.scores.nmi;
                row["ari"] = s.scores.ari;
                row["ami"] = s.scores.ami;
            }
        row["failed"] = report.failed;
        table.push_back(row);
        reports.push_back(std::move(report));
    }
    fs::create_directories(base.run.out_dir);
    write_text(base.run.out_dir + "/ablation.json", table.dump(2) + "\n");
    return reports;
}

namespace {

std::string canonical_reducer(const std::string& name) {
    std::string n;
    for (const char c : name)
        n += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == "kmeans" || n == "k-means" || n == "k-means-on-latents") return "kmeans";
    if (n == "tsne+hdbscan" || n == "t-sne+hdbscan") return "tsne+hdbscan";
    if (n == "umap+hdbscan") return "umap+hdbscan";
    if (n == "pca+kmeans" || n == "pca+k-means") return "pca+kmeans";
    if (n == "hdbscan" || n == "hdbscan-direct") return "hdbscan";
    throw config::ConfigError("unknown reducer: " + name);
}

}  // namespace

std::vector<ComparisonRow> run_comparison(const config::RunConfig& base,
                                          const std::vector<std::string>& reducers) {
    base.validate();
    if (reducers.empty()) throw config::ConfigError("no reducers given");
    std::vector<std::string> names;
    names.reserve(reducers.size());
    for (const auto& r : reducers) names.push_back(canonical_reducer(r));

    const std::string ckpt_path = base.run.out_dir + "/finetune.uqc";
    if (!fs::exists(ckpt_path)) {
        const RunReport r = run_pipeline(base);
        if (r.failed)
            throw std::runtime_error("pipeline failed in stage " + r.failed_stage + ": " +
                                     r.diagnostic);
    }
    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const auto model = checkpoint::restore_model(ckpt);

    data::Dataset full = load_dataset(base.data, base.run.seed);
    data::SplitSpec split_spec;
    split_spec.train_fraction = base.data.train_fraction;
    split_spec.seed = base.run.seed;
    auto [train_raw, test_raw] = data::split(full, split_spec);
    (void)train_raw;
    config::PreprocessSpec pp = base.preprocess;
    pp.fuzzy = ckpt.pp_fuzzy;
    pp.sharpen = ckpt.pp_sharpen;
    pp.side = ckpt.side;
    const data::Dataset test = preprocess_dataset(test_raw, pp, false);
    const Eigen::MatrixXd latents = encode_dataset(*model, test);
    const auto truth = truth_labels(test);
    const int m = static_cast<int>(latents.rows());

    std::vector<ComparisonRow> rows;
    json table = json::array();
    for (const auto& name : names) {
        ComparisonRow row;
        row.reducer = name;
        std::vector<int> labels;
        if (name == "kmeans") {
            labels = cluster::kmeans(latents, base.cluster.k, base.run.seed).second;
            row.discovered_clusters = base.cluster.k;
        } else if (name == "pca+kmeans") {
            const Eigen::MatrixXd y = embed::pca(latents, 2);
            labels = cluster::kmeans(y, base.cluster.k, base.run.seed).second;
            row.discovered_clusters = base.cluster.k;
        } else if (name == "tsne+hdbscan") {
            const Eigen::MatrixXd y = embed::tsne(latents, base.run.seed);
            const embed::ClusterLabels cl = embed::hdbscan(y, base.embed.min_cluster_size);
            labels = cl.labels;
            row.discovered_clusters = cl.C;
        } else if (name == "umap+hdbscan") {
            embed::ReduceConfig rcfg;
            rcfg.n_neighbors = std::min(base.embed.n_neighbors, std::max(2, m - 1));
            rcfg.min_dist = base.embed.min_dist;
            rcfg.n_epochs = base.embed.n_epochs;
            rcfg.seed = base.run.seed;
            const embed::Embedding2D emb = embed::reduce(latents, rcfg);
            embed::HdbscanConfig hcfg;
            hcfg.min_cluster_size = base.embed.min_cluster_size;
            const embed::ClusterLabels cl = embed::assign_labels(emb, hcfg);
            labels = cl.labels;
            row.discovered_clusters = cl.C;
        } else {  // hdbscan on the raw latents
            const embed::ClusterLabels cl = embed::hdbscan(latents, base.embed.min_cluster_size);
            labels = cl.labels;
            row.discovered_clusters = cl.C;
        }
        if (truth) {
            row.has_truth = true;
            row.scores.ari = metrics::ari(*truth, labels);
            row.scores.ami = metrics::ami(*truth, labels);
            row.scores.nmi = metrics::nmi(*truth, labels);
            row.scores.acc = metrics::acc(*truth, labels);
        }
        json jrow = {{"reducer", name}, {"discovered_clusters", row.discovered_clusters}};
        jrow["ari"] = row.has_truth ? json(row.scores.ari) : json(nullptr);
        jrow["ami"] = row.has_truth ? json(row.scores.ami) : json(nullptr);
        jrow["nmi"] = row.has_truth ? json(row.scores.nmi) : json(nullptr);
        jrow["acc"] = row.has_truth ? json(row.scores.acc) : json(nullptr);
        table.push_back(jrow);
        rows.push_back(std::move(row));
    }
    fs::create_directories(base.run.out_dir);
    write_text(base.run.out_dir + "/comparison.json", table.dump(2) + "\n");
    return rows;
}

InferenceSummary infer(const std::string& ckpt_path, const std::vector<std::string>& image_paths) {
    InferenceSummary summary;
    if (image_paths.empty()) return summary;

    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const auto model = checkpoint::restore_model(ckpt);
    const checkpoint::Sidecar sc = checkpoint::load_sidecar(checkpoint::sidecar_path(ckpt_path));
    if (sc.centroids2d.rows() == 0) throw std::runtime_error("sidecar has no clusters");

    preprocess::FuzzyFilterConfig fcfg;
    const int k = std::min<int>(sc.n_neighbors, static_cast<int>(sc.latents.rows()));

    for (const auto& path : image_paths) {
        const auto t0 = std::chrono::steady_clock::now();
        Image img = data::load_image_file(path);
        if (ckpt.pp_fuzzy) img = preprocess::fuzzy_filter(img, fcfg);
        if (ckpt.pp_sharpen) img = preprocess::sharpen(img);
        img = preprocess::standardize(img, ckpt.side);
        const std::vector<const Image*> ptr{&img};
        const Eigen::MatrixXd mu = model->encode(vae::to_tensor(ptr, ckpt.side), nullptr).mu;

        // place into the frozen embedding: inverse distance weights over the
        // k nearest fitted latents
        Eigen::VectorXd d2 =
            (sc.latents.rowwise() - mu.row(0)).rowwise().squaredNorm();
        std::vector<int> order(sc.latents.rows());
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](int a, int b) { return d2[a] < d2[b]; });
        double wsum = 0.0;
        Eigen::RowVector2d coord = Eigen::RowVector2d::Zero();
        for (int t = 0; t < k; ++t) {
            const double w = 1.0 / (std::sqrt(d2[order[t]]) + 1e-12);
            coord += w * sc.coords.row(order[t]);
            wsum += w;
        }
        coord /= wsum;

        int label = 0;
        (sc.centroids2d.rowwise() - coord).rowwise().squaredNorm().minCoeff(&label);

        InferenceFrame frame;
        frame.id = fs::path(path).stem().string();
        frame.label = label;
        frame.x = coord[0];
        frame.y = coord[1];
        frame.seconds = seconds_since(t0);
        summary.frames.push_back(std::move(frame));
    }

    const size_t warmup = summary.frames.size() > 5 ? 5 : 0;
    double total = 0.0;
    for (size_t i = warmup; i < summary.frames.size(); ++i) total += summary.frames[i].seconds;
    summary.steady_state_mean_seconds = total / static_cast<double>(summary.frames.size() - warmup);
    return summary;
}

}  // namespace uqc::pipeline
