#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "uqc/checkpoint.hpp"
#include "uqc/cluster.hpp"
#include "uqc/config.hpp"
#include "uqc/embed.hpp"
#include "uqc/pipeline.hpp"
#include "uqc/preprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uqc;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;  // section.key=value
    std::string out_dir;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_out_dir = true) {
    cmd->add_option("-c,--config", opts.config_file,
                    "config file; its values take precedence over flags");
    cmd->add_option("--set", opts.overrides, "section.key=value override (repeatable)")
        ->type_name("KEY=VALUE");
    // evaluate and visualize give --out a different meaning
    if (with_out_dir) cmd->add_option("--out", opts.out_dir, "output directory (run.out_dir)");
    cmd->add_option("--seed", opts.seed, "run seed (run.seed)");
}

// Convenience flags fill defaults, a config file replaces them (the file
// wins over flags), --set pairs apply last as explicit overrides.
config::RunConfig build_config(const CommonOpts& opts) {
    config::RunConfig cfg;
    if (!opts.out_dir.empty()) cfg.run.out_dir = opts.out_dir;
    if (opts.seed >= 0) cfg.run.seed = static_cast<uint64_t>(opts.seed);
    if (!opts.config_file.empty()) cfg = config::load_config(opts.config_file);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw config::ConfigError("--set expects section.key=value, got " + kv);
        config::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void check_device() {
    const char* dev = std::getenv("UQC_DEVICE");
    if (!dev || std::string(dev).empty() || std::string(dev) == "cpu") return;
    throw config::ConfigError(std::string("unsupported UQC_DEVICE '") + dev +
                              "' (this build supports: cpu)");
}

data::Dataset load_eval_data(const std::string& data_path, const std::string& manifest,
                             uint64_t seed) {
    config::DataSpec spec;
    spec.path = data_path;
    spec.kind = fs::exists(fs::path(data_path) / "train-images-idx3-ubyte") ||
                        fs::exists(fs::path(data_path) / "train-images-idx3-ubyte.gz")
                    ? "mnist"
                    : "directory";
    spec.manifest = manifest;
    return pipeline::load_dataset(spec, seed);
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<std::string> files;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<std::string> dir_files;
            for (const auto& e : fs::directory_iterator(in))
                if (e.is_regular_file()) dir_files.push_back(e.path().string());
            std::sort(dir_files.begin(), dir_files.end());
            files.insert(files.end(), dir_files.begin(), dir_files.end());
        } else {
            files.push_back(in);
        }
    }
    return files;
}

json bundle_json(const metrics::MetricBundle& b, bool has_truth) {
    json j;
    j["ari"] = has_truth ? json(b.ari) : json(nullptr);
    j["ami"] = has_truth ? json(b.ami) : json(nullptr);
    j["nmi"] = has_truth ? json(b.nmi) : json(nullptr);
    j["acc"] = has_truth ? json(b.acc) : json(nullptr);
    j["silhouette"] = b.silhouette ? json(*b.silhouette) : json(nullptr);
    j["ssim"] = b.ssim ? json(*b.ssim) : json(nullptr);
    j["mse"] = b.mse ? json(*b.mse) : json(nullptr);
    return j;
}

int cmd_run(const CommonOpts& opts) {
    const config::RunConfig cfg = build_config(opts);
    const pipeline::RunReport report = pipeline::run_pipeline(cfg);
    for (const auto& s : report.snapshots) {
        std::cout << s.stage << ":";
        if (s.has_truth)
            std::cout << " acc=" << s.scores.acc << " nmi=" << s.scores.nmi
                      << " ari=" << s.scores.ari << " ami=" << s.scores.ami;
        std::cout << " clusters=" << s.discovered_clusters << "\n";
    }
    std::cout << "report: " << cfg.run.out_dir + "/report.json" << "\n";
    if (report.failed) {
        std::cerr << "stage " << report.failed_stage << " failed: " << report.diagnostic << "\n";
        return 1;
    }
    return 0;
}

int cmd_preprocess(const CommonOpts& opts, const std::string& out_images) {
    const config::RunConfig cfg = build_config(opts);
    cfg.validate();
    const data::Dataset raw = pipeline::load_dataset(cfg.data, cfg.run.seed);
    const data::Dataset done = pipeline::preprocess_dataset(raw, cfg.preprocess, false);
    const std::string dir = out_images.empty() ? cfg.run.out_dir + "/preprocessed" : out_images;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.csv");
    manifest << "id,filename,label\n";
    for (const auto& s : done.samples) {
        cv::Mat m(static_cast<int>(s.pixels.rows()), static_cast<int>(s.pixels.cols()), CV_8UC1);
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c)
                m.at<uint8_t>(r, c) = static_cast<uint8_t>(std::lround(s.pixels(r, c) * 255.0));
        const std::string name = s.id + ".png";
        if (!cv::imwrite(dir + "/" + name, m))
            throw std::runtime_error("cannot write " + dir + "/" + name);
        manifest << s.id << "," << name << "," << (s.label ? std::to_string(*s.label) : "") << "\n";
    }
    std::cout << done.size() << " images -> " << dir << "\n";
    return 0;
}

int cmd_pretrain(const CommonOpts& opts) {
    config::RunConfig cfg = build_config(opts);
    cfg.validate();
    fs::create_directories(cfg.run.out_dir);

    data::Dataset full = pipeline::load_dataset(cfg.data, cfg.run.seed);
    data::SplitSpec split_spec{cfg.data.train_fraction, cfg.run.seed};
    auto [train_raw, test_raw] = data::split(full, split_spec);
    (void)test_raw;
    const data::Dataset train = pipeline::preprocess_dataset(train_raw, cfg.preprocess, true);

    vae::PriorSpec prior = cfg.vae.prior == "mixture"
                               ? vae::PriorSpec::gaussian_mixture(cfg.prior_components(),
                                                                  cfg.vae.latent, cfg.run.seed)
                               : vae::PriorSpec::standard_normal();
    vae::VaeModel model(cfg.preprocess.side, cfg.vae.latent, std::move(prior), cfg.run.seed,
                        cfg.vae.widths);
    const TrainConfig tc = cfg.vae_train_config();
    nn::OptimizerConfig oc;
    oc.kind = tc.optimizer;
    oc.lr = tc.lr;
    nn::Optimizer opt(oc);
    const auto history = vae::pretrain(model, train, tc, &opt);
    std::ofstream hist(cfg.run.out_dir + "/pretrain_history.jsonl");
    for (size_t e = 0; e < history.size(); ++e)
        hist << json({{"epoch", e + 1},
                      {"reconstruction", history[e].reconstruction},
                      {"kl", history[e].kl},
                      {"total", history[e].total}})
                    .dump()
             << "\n";
    const uint64_t h = config::fnv1a64(config::canonical_ini(cfg));
    checkpoint::save_checkpoint(cfg.run.out_dir + "/pretrain.uqc", model, nullptr, "pretrain",
                                static_cast<int>(history.size()), opt.t(), h,
                                cfg.preprocess.fuzzy, cfg.preprocess.sharpen);
    std::cout << "checkpoint: " << cfg.run.out_dir + "/pretrain.uqc"
              << " (epochs " << history.size() << ")\n";
    return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& ckpt_in) {
    config::RunConfig cfg = build_config(opts);
    cfg.validate();
    fs::create_directories(cfg.run.out_dir);

    data::Dataset full = pipeline::load_dataset(cfg.data, cfg.run.seed);
    data::SplitSpec split_spec{cfg.data.train_fraction, cfg.run.seed};
    auto [train_raw, test_raw] = data::split(full, split_spec);
    (void)test_raw;
    const data::Dataset train = pipeline::preprocess_dataset(train_raw, cfg.preprocess, true);

    std::unique_ptr<vae::VaeModel> model;
    const std::string pre = ckpt_in.empty() ? cfg.run.out_dir + "/pretrain.uqc" : ckpt_in;
    if (fs::exists(pre)) {
        model = checkpoint::restore_model(checkpoint::load_checkpoint(pre));
    } else if (!cfg.run.pretrain) {
        vae::PriorSpec prior = cfg.vae.prior == "mixture"
                                   ? vae::PriorSpec::gaussian_mixture(cfg.prior_components(),
                                                                      cfg.vae.latent, cfg.run.seed)
                                   : vae::PriorSpec::standard_normal();
        model = std::make_unique<vae::VaeModel>(cfg.preprocess.side, cfg.vae.latent,
                                                std::move(prior), cfg.run.seed, cfg.vae.widths);
    } else {
        throw std::runtime_error("pretrain checkpoint not found: " + pre +
                                 " (run pretrain first, or set run.pretrain = false)");
    }

    const Eigen::MatrixXd latents = pipeline::encode_dataset(*model, train);
    cluster::Centroids centroids = cluster::init_centroids(latents, cfg.cluster.k, cfg.run.seed);
    const auto history = cluster::finetune(*model, centroids, train, cfg.cluster_train_config());
    std::ofstream hist(cfg.run.out_dir + "/finetune_history.jsonl");
    for (size_t e = 0; e < history.size(); ++e)
        hist << json({{"epoch", e + 1},
                      {"lv", history[e].lv},
                      {"lc", history[e].lc},
                      {"total", history[e].total}})
                    .dump()
             << "\n";
    const uint64_t h = config::fnv1a64(config::canonical_ini(cfg));
    checkpoint::save_checkpoint(cfg.run.out_dir + "/finetune.uqc", *model, &centroids.mu,
                                "finetune", static_cast<int>(history.size()), 0, h,
                                cfg.preprocess.fuzzy, cfg.preprocess.sharpen);
    std::cout << "checkpoint: " << cfg.run.out_dir + "/finetune.uqc"
              << " (epochs " << history.size() << ")\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& labels_manifest, const std::string& out_json) {
    const config::RunConfig cfg = build_config(opts);
    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const auto model = checkpoint::restore_model(ckpt);

    data::Dataset raw = load_eval_data(data_dir, labels_manifest, cfg.run.seed);
    config::PreprocessSpec pp = cfg.preprocess;
    pp.fuzzy = ckpt.pp_fuzzy;
    pp.sharpen = ckpt.pp_sharpen;
    pp.side = ckpt.side;
    const data::Dataset ds = pipeline::preprocess_dataset(raw, pp, false);

    embed::Embedding2D emb;
    embed::ClusterLabels labels;
    const pipeline::Snapshot snap =
        pipeline::evaluate_snapshot(*model, ds, cfg.embed, cfg.run.seed, "evaluate", &emb, &labels);

    checkpoint::Sidecar sc;
    sc.config_hash = ckpt.config_hash;
    sc.latents = pipeline::encode_dataset(*model, ds);
    sc.coords = emb.points;
    sc.labels = labels.labels;
    sc.centroids2d = pipeline::label_centroids_2d(emb.points, labels.labels, labels.C);
    sc.n_neighbors = cfg.embed.n_neighbors;
    checkpoint::save_sidecar(checkpoint::sidecar_path(ckpt_path), sc);

    char ckpt_hash[17];
    std::snprintf(ckpt_hash, sizeof(ckpt_hash), "%016llx",
                  static_cast<unsigned long long>(ckpt.config_hash));
    json j = bundle_json(snap.scores, snap.has_truth);
    j["discovered_clusters"] = snap.discovered_clusters;
    j["config_hash"] = config::config_hash(cfg);
    j["checkpoint_config_hash"] = std::string(ckpt_hash);
    j["run_id"] = config::run_id(cfg);
    std::ofstream out(out_json);
    if (!out) throw std::runtime_error("cannot write " + out_json);
    out << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_visualize(const CommonOpts& opts, const std::string& ckpt_path,
                  const std::string& data_dir, const std::string& labels_manifest,
                  const std::string& out_base) {
    const config::RunConfig cfg = build_config(opts);
    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const auto model = checkpoint::restore_model(ckpt);
    data::Dataset raw = load_eval_data(data_dir, labels_manifest, cfg.run.seed);
    config::PreprocessSpec pp = cfg.preprocess;
    pp.fuzzy = ckpt.pp_fuzzy;
    pp.sharpen = ckpt.pp_sharpen;
    pp.side = ckpt.side;
    const data::Dataset ds = pipeline::preprocess_dataset(raw, pp, false);
    embed::Embedding2D emb;
    embed::ClusterLabels labels;
    pipeline::evaluate_snapshot(*model, ds, cfg.embed, cfg.run.seed, "visualize", &emb, &labels);
    std::optional<std::vector<int>> truth;
    {
        std::vector<int> t;
        bool all = true;
        for (const auto& s : ds.samples) {
            if (!s.label) {
                all = false;
                break;
            }
            t.push_back(*s.label);
        }
        if (all && !ds.samples.empty()) truth = std::move(t);
    }
    const std::string png = embed::plot_clusters(emb, labels, truth ? &*truth : nullptr, out_base);
    std::cout << png << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    const config::RunConfig cfg = build_config(opts);
    const auto reports = pipeline::run_ablation(cfg);
    const char* names[4] = {"PT+PP", "PT", "PP", "none"};
    std::cout << "cell    acc\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        double acc = -1.0;
        for (const auto& s : reports[i].snapshots)
            if (s.stage == "post_finetune" && s.has_truth) acc = s.scores.acc;
        std::cout << names[i] << (reports[i].failed ? "  FAILED" : "") << "  "
                  << (acc >= 0.0 ? std::to_string(acc) : "n/a") << "\n";
    }
    std::cout << "table: " << cfg.run.out_dir + "/ablation.json" << "\n";
    for (const auto& r : reports)
        if (r.failed) return 1;
    return 0;
}

int cmd_compare(const CommonOpts& opts, const std::vector<std::string>& reducers) {
    const config::RunConfig cfg = build_config(opts);
    const auto rows = pipeline::run_comparison(cfg, reducers);
    std::cout << "reducer            acc     nmi     ari     ami   clusters\n";
    for (const auto& r : rows) {
        std::cout << r.reducer;
        for (size_t pad = r.reducer.size(); pad < 18; ++pad) std::cout << ' ';
        if (r.has_truth)
            std::cout << r.scores.acc << "  " << r.scores.nmi << "  " << r.scores.ari << "  "
                      << r.scores.ami << "  ";
        else
            std::cout << "n/a  n/a  n/a  n/a  ";
        std::cout << r.discovered_clusters << "\n";
    }
    std::cout << "table: " << cfg.run.out_dir + "/comparison.json" << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& inputs, int repeat) {
    std::vector<std::string> files = expand_inputs(inputs);
    if (repeat > 1) {
        std::vector<std::string> repeated;
        for (int r = 0; r < repeat; ++r) repeated.insert(repeated.end(), files.begin(), files.end());
        files = std::move(repeated);
    }
    const pipeline::InferenceSummary summary = pipeline::infer(ckpt_path, files);
    for (const auto& f : summary.frames)
        std::cout << json({{"id", f.id},
                           {"label", f.label},
                           {"x", f.x},
                           {"y", f.y},
                           {"seconds", f.seconds}})
                         .dump()
                  << "\n";
    if (!summary.frames.empty())
        std::cout << json({{"frames", summary.frames.size()},
                           {"steady_state_mean_seconds", summary.steady_state_mean_seconds}})
                         .dump()
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised quality clustering toolkit"};
    app.require_subcommand(1);

    CommonOpts run_o, pre_o, pt_o, ft_o, ev_o, vis_o, ab_o, cmp_o;
    std::string pre_out, ft_ckpt;
    std::string ev_ckpt, ev_data, ev_labels, ev_out = "report.json";
    std::string vis_ckpt, vis_data, vis_labels, vis_out = "embedding";
    std::vector<std::string> cmp_reducers = {"kmeans", "tsne+hdbscan", "umap+hdbscan",
                                             "pca+kmeans", "hdbscan"};
    std::string inf_ckpt;
    std::vector<std::string> inf_inputs;
    int inf_repeat = 1;

    auto* run = app.add_subcommand("run", "full pipeline: preprocess, train, evaluate, report");
    add_common(run, run_o);

    auto* pre = app.add_subcommand("preprocess", "run the preprocessing stage, write images");
    add_common(pre, pre_o);
    pre->add_option("--out-images", pre_out, "directory for the processed images");

    auto* pt = app.add_subcommand("pretrain", "train the VAE, save pretrain.uqc");
    add_common(pt, pt_o);

    auto* ft = app.add_subcommand("finetune", "joint clustering fine-tuning, save finetune.uqc");
    add_common(ft, ft_o);
    ft->add_option("--ckpt", ft_ckpt, "pretrain checkpoint (default OUT/pretrain.uqc)");

    auto* ev = app.add_subcommand("evaluate", "embed a dataset, emit metrics JSON and sidecar");
    add_common(ev, ev_o, false);
    ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
    ev->add_option("--data", ev_data, "image directory or IDX root")->required();
    ev->add_option("--labels", ev_labels, "label manifest (id,filename,label)");
    ev->add_option("--out", ev_out, "metrics JSON path")->capture_default_str();

    auto* vis = app.add_subcommand("visualize", "scatter plot of the 2-D embedding");
    add_common(vis, vis_o, false);
    vis->add_option("--ckpt", vis_ckpt)->required();
    vis->add_option("--data", vis_data)->required();
    vis->add_option("--labels", vis_labels);
    vis->add_option("--out", vis_out, "output base path (.png/.svg)")->capture_default_str();

    auto* ab = app.add_subcommand("ablate", "2x2 preprocessing x pretraining grid");
    add_common(ab, ab_o);

    auto* cmp = app.add_subcommand("compare", "reducer comparison on one checkpoint");
    add_common(cmp, cmp_o);
    cmp->add_option("--reducers", cmp_reducers,
                    "subset of: kmeans tsne+hdbscan umap+hdbscan pca+kmeans hdbscan")
        ->delimiter(',')
        ->capture_default_str();

    auto* inf = app.add_subcommand("infer", "label images with a frozen checkpoint");
    inf->add_option("--ckpt", inf_ckpt)->required();
    inf->add_option("--data", inf_inputs, "image files or directories")->required();
    inf->add_option("--repeat", inf_repeat, "process the input list N times")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
        check_device();
        if (*run) return cmd_run(run_o);
        if (*pre) return cmd_preprocess(pre_o, pre_out);
        if (*pt) return cmd_pretrain(pt_o);
        if (*ft) return cmd_finetune(ft_o, ft_ckpt);
        if (*ev) return cmd_evaluate(ev_o, ev_ckpt, ev_data, ev_labels, ev_out);
        if (*vis) return cmd_visualize(vis_o, vis_ckpt, vis_data, vis_labels, vis_out);
        if (*ab) return cmd_ablate(ab_o);
        if (*cmp) return cmd_compare(cmp_o, cmp_reducers);
        if (*inf) return cmd_infer(inf_ckpt, inf_inputs, inf_repeat);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
