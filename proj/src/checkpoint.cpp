#include <array>
#include <cstring>
#include <fstream>

#include "uqc/checkpoint.hpp"

namespace uqc::checkpoint {

namespace {

constexpr char kModelMagic[4] = {'U', 'Q', 'C', '1'};
constexpr char kSidecarMagic[4] = {'U', 'Q', 'S', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("corrupt checkpoint: truncated");
    return v;
}

void write_str(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
    const auto n = read_pod<uint32_t>(in);
    if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint: oversized string");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("corrupt checkpoint: truncated");
    return s;
}

void write_vec(std::ostream& out, const Eigen::VectorXd& v) {
    write_pod<uint64_t>(out, static_cast<uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(sizeof(double) * v.size()));
}

Eigen::VectorXd read_vec(std::istream& in) {
    const auto n = read_pod<uint64_t>(in);
    if (n > (1ull << 32)) throw std::runtime_error("corrupt checkpoint: oversized tensor");
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * n));
    if (!in) throw std::runtime_error("corrupt checkpoint: truncated");
    return v;
}

void write_mat(std::ostream& out, const Eigen::MatrixXd& m) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(m.rows()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
}

Eigen::MatrixXd read_mat(std::istream& in) {
    const auto rows = read_pod<uint32_t>(in);
    const auto cols = read_pod<uint32_t>(in);
    Eigen::MatrixXd m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
        for (uint32_t c = 0; c < cols; ++c) m(r, c) = read_pod<double>(in);
    return m;
}

void check_magic(std::istream& in, const char expect[4], const char* what) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, expect, 4) != 0)
        throw std::runtime_error(std::string("unsupported ") + what + " version: bad magic");
    const auto version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw std::runtime_error(std::string("unsupported ") + what + " version " +
                                 std::to_string(version));
}

}  // namespace

void save_checkpoint(const std::string& path, vae::VaeModel& model,
                     const Eigen::MatrixXd* centroids, const std::string& stage, int epoch,
                     long long opt_t, uint64_t config_hash, bool pp_fuzzy, bool pp_sharpen) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kModelMagic, 4);
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint64_t>(out, config_hash);
    write_str(out, stage);
    write_pod<int32_t>(out, epoch);
    write_pod<int64_t>(out, opt_t);
    write_pod<uint8_t>(out, pp_fuzzy ? 1 : 0);
    write_pod<uint8_t>(out, pp_sharpen ? 1 : 0);
    write_pod<int32_t>(out, model.side());
    write_pod<int32_t>(out, model.latent_dim());
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.widths().size()));
    for (const int w : model.widths()) write_pod<int32_t>(out, w);
    const auto& prior = model.prior();
    write_pod<uint8_t>(out, prior.kind == vae::PriorSpec::Kind::gaussian_mixture ? 1 : 0);
    write_pod<int32_t>(out, prior.components);
    write_pod<uint64_t>(out, model.init_seed());
    const auto params = model.params();
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (const nn::Param* p : params) {
        write_str(out, p->name);
        write_vec(out, p->value);
        write_vec(out, p->m);
        write_vec(out, p->v);
    }
    write_pod<uint8_t>(out, centroids ? 1 : 0);
    if (centroids) write_mat(out, *centroids);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    check_magic(in, kModelMagic, "checkpoint");
    Checkpoint c;
    c.config_hash = read_pod<uint64_t>(in);
    c.stage = read_str(in);
    c.epoch = read_pod<int32_t>(in);
    c.opt_t = read_pod<int64_t>(in);
    c.pp_fuzzy = read_pod<uint8_t>(in) != 0;
    c.pp_sharpen = read_pod<uint8_t>(in) != 0;
    c.side = read_pod<int32_t>(in);
    c.latent = read_pod<int32_t>(in);
    const auto nw = read_pod<uint32_t>(in);
    if (nw == 0 || nw > 16) throw std::runtime_error("corrupt checkpoint: widths");
    c.widths.resize(nw);
    for (auto& w : c.widths) w = read_pod<int32_t>(in);
    c.prior_kind = read_pod<uint8_t>(in);
    c.prior_components = read_pod<int32_t>(in);
    c.init_seed = read_pod<uint64_t>(in);
    const auto np = read_pod<uint32_t>(in);
    if (np > 4096) throw std::runtime_error("corrupt checkpoint: parameter count");
    c.tensors.reserve(np);
    for (uint32_t i = 0; i < np; ++i) {
        std::string name = read_str(in);
        std::array<Eigen::VectorXd, 3> slots;
        slots[0] = read_vec(in);
        slots[1] = read_vec(in);
        slots[2] = read_vec(in);
        c.tensors.emplace_back(std::move(name), std::move(slots));
    }
    if (read_pod<uint8_t>(in) != 0) c.centroids = read_mat(in);
    return c;
}

std::unique_ptr<vae::VaeModel> restore_model(const Checkpoint& ckpt) {
    vae::PriorSpec prior =
        ckpt.prior_kind == 1
            ? vae::PriorSpec::gaussian_mixture(ckpt.prior_components, ckpt.latent, ckpt.init_seed)
            : vae::PriorSpec::standard_normal();
    auto model = std::make_unique<vae::VaeModel>(ckpt.side, ckpt.latent, std::move(prior),
                                                 ckpt.init_seed, ckpt.widths);
    auto params = model->params();
    if (params.size() != ckpt.tensors.size())
        throw std::runtime_error("checkpoint does not match architecture: parameter count");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, slots] = ckpt.tensors[i];
        if (params[i]->name != name || params[i]->value.size() != slots[0].size())
            throw std::runtime_error("checkpoint does not match architecture: " + name);
        params[i]->value = slots[0];
        params[i]->m = slots[1];
        params[i]->v = slots[2];
    }
    model->sync_prior();
    return model;
}

void save_sidecar(const std::string& path, const Sidecar& sc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write sidecar: " + path);
    out.write(kSidecarMagic, 4);
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint64_t>(out, sc.config_hash);
    write_mat(out, sc.latents);
    write_mat(out, sc.coords);
    write_pod<uint32_t>(out, static_cast<uint32_t>(sc.labels.size()));
    for (const int l : sc.labels) write_pod<int32_t>(out, l);
    write_mat(out, sc.centroids2d);
    write_pod<int32_t>(out, sc.n_neighbors);
    if (!out) throw std::runtime_error("cannot write sidecar: " + path);
}

Sidecar load_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open sidecar: " + path);
    check_magic(in, kSidecarMagic, "sidecar");
    Sidecar sc;
    sc.config_hash = read_pod<uint64_t>(in);
    sc.latents = read_mat(in);
    sc.coords = read_mat(in);
    const auto n = read_pod<uint32_t>(in);
    sc.labels.resize(n);
    for (auto& l : sc.labels) l = read_pod<int32_t>(in);
    sc.centroids2d = read_mat(in);
    sc.n_neighbors = read_pod<int32_t>(in);
    if (sc.latents.rows() != sc.coords.rows() ||
        sc.latents.rows() != static_cast<Eigen::Index>(sc.labels.size()))
        throw std::runtime_error("corrupt sidecar: row mismatch");
    return sc;
}

std::string sidecar_path(const std::string& checkpoint_path) {
    const auto dot = checkpoint_path.find_last_of('.');
    const auto slash = checkpoint_path.find_last_of("/\\");
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return checkpoint_path + ".uqs";
    return checkpoint_path.substr(0, dot) + ".uqs";
}

}  // namespace uqc::checkpoint
