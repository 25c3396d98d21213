#pragma once

// The trainable scorer: user/item embedding tables with per-task affine
// heads over the dot product. Small enough to stay dependency-free.

#include "prerank/config.hpp"
#include "prerank/rng.hpp"
#include "prerank/sampler.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <vector>

namespace prerank {

inline constexpr double kNormGuard = 1e-10;

struct TaskHeads {
    double a_click = 1.0, b_click = 0.0;
    double a_purchase = 1.0, b_purchase = 0.0;
    double a_global = 1.0, b_global = 0.0;
};

class TowerModel {
public:
    TowerModel() = default;

    /// Embeddings initialise uniform in [-1/sqrt(d), 1/sqrt(d)], heads at
    /// identity (a=1, b=0).
    TowerModel(std::int64_t n_users, std::int64_t n_items, int dim, std::uint64_t seed)
        : n_users_(n_users), n_items_(n_items), dim_(dim) {
        if (n_users < 1 || n_items < 1 || dim < 1)
            throw std::invalid_argument("TowerModel: counts and dim must be >= 1");
        const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
        user_emb_.resize(static_cast<std::size_t>(n_users) * dim);
        item_emb_.resize(static_cast<std::size_t>(n_items) * dim);
        Rng rng(derive_seed(seed, Stream::model_init));
        for (double& x : user_emb_) x = scale * (2.0 * rng.uniform01() - 1.0);
        for (double& x : item_emb_) x = scale * (2.0 * rng.uniform01() - 1.0);
    }

    std::int64_t n_users() const { return n_users_; }
    std::int64_t n_items() const { return n_items_; }
    int dim() const { return dim_; }

    const double* user_vec(UserId u) const {
        check_user(u);
        return &user_emb_[static_cast<std::size_t>(u) * dim_];
    }
    const double* item_vec(ItemId j) const {
        check_item(j);
        return &item_emb_[static_cast<std::size_t>(j) * dim_];
    }
    double* user_vec_mut(UserId u) {
        check_user(u);
        return &user_emb_[static_cast<std::size_t>(u) * dim_];
    }
    double* item_vec_mut(ItemId j) {
        check_item(j);
        return &item_emb_[static_cast<std::size_t>(j) * dim_];
    }

    TaskHeads& heads() { return heads_; }
    const TaskHeads& heads() const { return heads_; }

    double dot(UserId u, ItemId j) const {
        const double* a = user_vec(u);
        const double* b = item_vec(j);
        double s = 0.0;
        for (int k = 0; k < dim_; ++k) s += a[k] * b[k];
        return s;
    }

    double user_norm(UserId u) const { return norm(user_vec(u)); }
    double item_norm(ItemId j) const { return norm(item_vec(j)); }

    const std::vector<double>& user_table() const { return user_emb_; }
    const std::vector<double>& item_table() const { return item_emb_; }

    bool operator==(const TowerModel& o) const {
        return n_users_ == o.n_users_ && n_items_ == o.n_items_ && dim_ == o.dim_ &&
               user_emb_ == o.user_emb_ && item_emb_ == o.item_emb_ &&
               std::memcmp(&heads_, &o.heads_, sizeof heads_) == 0;
    }

private:
    void check_user(UserId u) const {
        if (u < 0 || u >= n_users_)
            throw std::out_of_range("user id " + std::to_string(u) + " out of range [0, " +
                                    std::to_string(n_users_) + ")");
    }
    void check_item(ItemId j) const {
        if (j < 0 || j >= n_items_)
            throw std::out_of_range("item id " + std::to_string(j) + " out of range [0, " +
                                    std::to_string(n_items_) + ")");
    }
    double norm(const double* v) const {
        double s = 0.0;
        for (int k = 0; k < dim_; ++k) s += v[k] * v[k];
        return std::sqrt(s);
    }

    std::int64_t n_users_ = 0, n_items_ = 0;
    int dim_ = 0;
    std::vector<double> user_emb_, item_emb_;
    TaskHeads heads_;

    friend void save_model(const TowerModel&, const std::string&);
    friend TowerModel load_model(const std::string&);
};

/// Per-instance forward values. `y` is the raw dot product; `y_weighted`
/// adds the synthetic cross score (zero outside N1..N3); task scores are the
/// affine heads applied to the weighted logit.
struct ScoredInstance {
    double y = 0.0;
    double u_norm = 0.0;
    double i_norm = 0.0;
    double v = 0.0;    // u_norm * i_norm
    double cos = 0.0;  // y / (v + guard)
    double y_weighted = 0.0;
    double score_click = 0.0;
    double score_purchase = 0.0;
    double score_global = 0.0;
};

struct ScoredBatch {
    std::vector<std::vector<ScoredInstance>> requests;  // aligned with ListwiseBatch
};

inline ScoredBatch forward(const TowerModel& model, const ListwiseBatch& batch) {
    ScoredBatch out;
    out.requests.resize(batch.requests.size());
    const TaskHeads& h = model.heads();
    for (std::size_t g = 0; g < batch.requests.size(); ++g) {
        const RequestSamples& req = batch.requests[g];
        auto& scored = out.requests[g];
        scored.resize(req.instances.size());
        const double u_norm = model.user_norm(req.user);
        for (std::size_t i = 0; i < req.instances.size(); ++i) {
            const SampledInstance& inst = req.instances[i];
            ScoredInstance s;
            s.y = model.dot(req.user, inst.item);
            s.u_norm = u_norm;
            s.i_norm = model.item_norm(inst.item);
            s.v = s.u_norm * s.i_norm;
            s.cos = s.y / (s.v + kNormGuard);
            s.y_weighted = s.y + inst.cross_score;
            s.score_click = h.a_click * s.y_weighted + h.b_click;
            s.score_purchase = h.a_purchase * s.y_weighted + h.b_purchase;
            s.score_global = h.a_global * s.y_weighted + h.b_global;
            scored[i] = s;
        }
    }
    return out;
}

/// Loss gradients w.r.t. the forward values of one instance. The trainer
/// folds these back into embedding and head gradients.
struct ScoreGrads {
    double d_y = 0.0;
    double d_v = 0.0;
    double d_score_click = 0.0;
    double d_score_purchase = 0.0;
    double d_score_global = 0.0;
};

struct BatchGrads {
    std::vector<std::vector<ScoreGrads>> requests;

    explicit BatchGrads(const ListwiseBatch& batch) {
        requests.resize(batch.requests.size());
        for (std::size_t g = 0; g < batch.requests.size(); ++g)
            requests[g].assign(batch.requests[g].instances.size(), ScoreGrads{});
    }
};

/// Sparse parameter-shaped gradients accumulated over a batch.
struct GradientBuffer {
    std::unordered_map<UserId, std::vector<double>> users;
    std::unordered_map<ItemId, std::vector<double>> items;
    TaskHeads heads{0, 0, 0, 0, 0, 0};

    std::vector<double>& user_slot(UserId u, int dim) {
        auto [it, fresh] = users.try_emplace(u);
        if (fresh) it->second.assign(static_cast<std::size_t>(dim), 0.0);
        return it->second;
    }
    std::vector<double>& item_slot(ItemId j, int dim) {
        auto [it, fresh] = items.try_emplace(j);
        if (fresh) it->second.assign(static_cast<std::size_t>(dim), 0.0);
        return it->second;
    }
};

/// Chain rule from per-instance score gradients down to embeddings and
/// heads: y = u.i, v = |u||i|, y^t = a_t * (y + cross) + b_t.
inline void backward(const TowerModel& model, const ListwiseBatch& batch,
                     const ScoredBatch& scored, const BatchGrads& grads, GradientBuffer& out) {
    const TaskHeads& h = model.heads();
    const int dim = model.dim();
    for (std::size_t g = 0; g < batch.requests.size(); ++g) {
        const RequestSamples& req = batch.requests[g];
        std::vector<double>& gu = out.user_slot(req.user, dim);
        const double* u = model.user_vec(req.user);
        for (std::size_t i = 0; i < req.instances.size(); ++i) {
            const ScoredInstance& s = scored.requests[g][i];
            const ScoreGrads& sg = grads.requests[g][i];

            out.heads.a_click += sg.d_score_click * s.y_weighted;
            out.heads.b_click += sg.d_score_click;
            out.heads.a_purchase += sg.d_score_purchase * s.y_weighted;
            out.heads.b_purchase += sg.d_score_purchase;
            out.heads.a_global += sg.d_score_global * s.y_weighted;
            out.heads.b_global += sg.d_score_global;

            const double d_y = sg.d_y + sg.d_score_click * h.a_click +
                               sg.d_score_purchase * h.a_purchase +
                               sg.d_score_global * h.a_global;
            const double d_v = sg.d_v;
            if (d_y == 0.0 && d_v == 0.0) continue;

            const ItemId item = batch.requests[g].instances[i].item;
            const double* iv = model.item_vec(item);
            std::vector<double>& gi = out.item_slot(item, dim);
            const double du_scale = d_v * s.i_norm / (s.u_norm + kNormGuard);
            const double di_scale = d_v * s.u_norm / (s.i_norm + kNormGuard);
            for (int k = 0; k < dim; ++k) {
                gu[k] += d_y * iv[k] + du_scale * u[k];
                gi[k] += d_y * u[k] + di_scale * iv[k];
            }
        }
    }
}

/// Plain SGD step. Any non-finite gradient aborts before touching the model.
inline void apply_gradients(TowerModel& model, const GradientBuffer& grads, double lr) {
    auto check = [](double g) {
        if (!std::isfinite(g)) throw std::runtime_error("apply_gradients: non-finite gradient");
    };
    for (const auto& [u, g] : grads.users)
        for (double x : g) check(x);
    for (const auto& [j, g] : grads.items)
        for (double x : g) check(x);
    check(grads.heads.a_click);
    check(grads.heads.b_click);
    check(grads.heads.a_purchase);
    check(grads.heads.b_purchase);
    check(grads.heads.a_global);
    check(grads.heads.b_global);

    const int dim = model.dim();
    for (const auto& [u, g] : grads.users) {
        double* v = model.user_vec_mut(u);
        for (int k = 0; k < dim; ++k) v[k] -= lr * g[k];
    }
    for (const auto& [j, g] : grads.items) {
        double* v = model.item_vec_mut(j);
        for (int k = 0; k < dim; ++k) v[k] -= lr * g[k];
    }
    TaskHeads& h = model.heads();
    h.a_click -= lr * grads.heads.a_click;
    h.b_click -= lr * grads.heads.b_click;
    h.a_purchase -= lr * grads.heads.a_purchase;
    h.b_purchase -= lr * grads.heads.b_purchase;
    h.a_global -= lr * grads.heads.a_global;
    h.b_global -= lr * grads.heads.b_global;
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian binary, magic + version header, then the
// head parameters and both tables as raw doubles. Bit-exact round trip.

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'N', 'K', 'M', 'D', 'L', '1'};

inline void save_model(const TowerModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot open '" + path + "'");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = 1;
    auto put = [&out](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    put(&version, sizeof version);
    put(&model.n_users_, sizeof model.n_users_);
    put(&model.n_items_, sizeof model.n_items_);
    put(&model.dim_, sizeof model.dim_);
    put(&model.heads_, sizeof model.heads_);
    put(model.user_emb_.data(), model.user_emb_.size() * sizeof(double));
    put(model.item_emb_.data(), model.item_emb_.size() * sizeof(double));
    if (!out) throw std::runtime_error("save_model: I/O failure writing '" + path + "'");
}

inline TowerModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open '" + path + "'");
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error("load_model: '" + path + "' is not a model checkpoint");
    std::uint32_t version = 0;
    auto get = [&in, &path](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw std::runtime_error("load_model: truncated checkpoint '" + path + "'");
    };
    get(&version, sizeof version);
    if (version != 1)
        throw std::runtime_error("load_model: unsupported checkpoint version " +
                                 std::to_string(version));
    TowerModel m;
    get(&m.n_users_, sizeof m.n_users_);
    get(&m.n_items_, sizeof m.n_items_);
    get(&m.dim_, sizeof m.dim_);
    if (m.n_users_ < 1 || m.n_items_ < 1 || m.dim_ < 1)
        throw std::runtime_error("load_model: corrupt header in '" + path + "'");
    get(&m.heads_, sizeof m.heads_);
    m.user_emb_.resize(static_cast<std::size_t>(m.n_users_) * m.dim_);
    m.item_emb_.resize(static_cast<std::size_t>(m.n_items_) * m.dim_);
    get(m.user_emb_.data(), m.user_emb_.size() * sizeof(double));
    get(m.item_emb_.data(), m.item_emb_.size() * sizeof(double));
    return m;
}

}  // namespace prerank
