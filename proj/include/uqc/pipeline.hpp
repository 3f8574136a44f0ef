#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uqc/checkpoint.hpp"
#include "uqc/config.hpp"
#include "uqc/embed.hpp"
#include "uqc/metrics.hpp"

namespace uqc::pipeline {

struct StageResult {
    std::string name;
    double seconds = 0.0;
    bool ok = true;
};

// Held-out metrics computed through the full tail of the pipeline: encode,
// UMAP, HDBSCAN, agreement against the manifest labels (when present) plus
// reconstruction quality and the 2-D silhouette.
struct Snapshot {
    std::string stage;  // "post_pretrain" | "post_finetune"
    bool has_truth = false;
    metrics::MetricBundle scores;
    int discovered_clusters = 0;
};

struct RunReport {
    std::string schema_version = "1";
    std::string config_hash;
    std::string run_id;
    bool failed = false;
    std::string failed_stage;
    std::string diagnostic;
    std::vector<StageResult> stages;
    std::vector<Snapshot> snapshots;
    std::map<std::string, std::string> artifacts;  // name -> path

    std::string to_json() const;  // schema documented in the README
};

// preprocess -> pretrain -> finetune -> embed -> evaluate. Writes into
// cfg.run.out_dir: canonical config.ini, pretrain/finetune checkpoints, loss
// histories (line-delimited JSON), embedding plots, the inference sidecar,
// and report.json. A stage failure marks the report failed (with stage name
// and diagnostic) instead of throwing; config problems still throw.
RunReport run_pipeline(const config::RunConfig& cfg);

// 2x2 {preprocessing on/off} x {pretraining on/off}, each cell a full run in
// its own subdirectory. Row order: pt+pp, pt, pp, neither. Writes
// ablation.json next to the cells.
std::vector<RunReport> run_ablation(const config::RunConfig& base);

struct ComparisonRow {
    std::string reducer;
    bool has_truth = false;
    metrics::MetricBundle scores;
    int discovered_clusters = 0;
};

// Evaluates post-processing variants of one fine-tuned checkpoint (running
// the pipeline first if the checkpoint is missing). Valid reducer names:
// kmeans, tsne+hdbscan, umap+hdbscan, pca+kmeans, hdbscan. Writes
// comparison.json. Unknown names are config errors.
std::vector<ComparisonRow> run_comparison(const config::RunConfig& base,
                                          const std::vector<std::string>& reducers);

struct InferenceFrame {
    std::string id;
    int label = -1;
    double x = 0.0;
    double y = 0.0;
    double seconds = 0.0;
};

struct InferenceSummary {
    std::vector<InferenceFrame> frames;
    double steady_state_mean_seconds = 0.0;  // mean after 5 warm-up frames
};

// Loads the checkpoint and its sidecar, then per image: preprocess with the
// training flags, encode, place into the frozen 2-D embedding (distance
// weighted average of the nearest fitted latents), label by nearest 2-D
// cluster centroid. Empty input gives an empty summary.
InferenceSummary infer(const std::string& ckpt_path, const std::vector<std::string>& image_paths);

// Helpers shared by the CLI.
Eigen::MatrixXd label_centroids_2d(const Eigen::MatrixXd& coords, const std::vector<int>& labels,
                                   int C);
data::Dataset load_dataset(const config::DataSpec& spec, uint64_t seed);
data::Dataset preprocess_dataset(const data::Dataset& ds, const config::PreprocessSpec& spec,
                                 bool train);
Eigen::MatrixXd encode_dataset(vae::VaeModel& model, const data::Dataset& ds);
Snapshot evaluate_snapshot(vae::VaeModel& model, const data::Dataset& test,
                           const config::EmbedSpec& espec, uint64_t seed, const std::string& stage,
                           embed::Embedding2D* out_embedding = nullptr,
                           embed::ClusterLabels* out_labels = nullptr);

}  // namespace uqc::pipeline
