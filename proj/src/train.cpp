#include "docmmir/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "docmmir/error.hpp"
#include "docmmir/metrics.hpp"

namespace docmmir::train {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void require_finite(const Matrix& s) {
    for (double x : s.data)
        if (!std::isfinite(x)) throw ArgumentError("similarity matrix has a non-finite entry");
}

void require_square(const Matrix& s) {
    if (s.rows != s.cols || s.rows == 0) throw ArgumentError("similarity matrix must be square and non-empty");
}

// One orientation of the weighted BCE. `transposed` reads S[j][i] at (i, j).
// Adds 0.5 * dL/dS into ds when given.
double bce_orientation(const Matrix& s, bool transposed, double scale, double bias, double pos_weight, Matrix* ds,
                       double* dscale, double* dbias) {
    const std::size_t b = s.rows;
    const double total_weight = pos_weight * static_cast<double>(b) + static_cast<double>(b * b - b);
    double sum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            const std::size_t r = transposed ? j : i, c = transposed ? i : j;
            const double sv = s(r, c);
            const double x = scale * sv + bias;
            const bool pos = i == j;
            const double w = pos ? pos_weight : 1.0;
            sum += w * (pos ? softplus(-x) : softplus(x));
            if (ds) {
                const double dx = 0.5 * w * (sigmoid(x) - (pos ? 1.0 : 0.0)) / total_weight;
                (*ds)(r, c) += dx * scale;
                *dscale += dx * sv;
                *dbias += dx;
            }
        }
    }
    return sum / total_weight;
}

double bce_forward_backward(const Matrix& s, double scale, double bias, double pos_weight, Matrix* ds,
                            double* dscale, double* dbias) {
    require_square(s);
    require_finite(s);
    if (!(pos_weight > 0.0)) throw ArgumentError("pos_weight must be positive");
    const double a = bce_orientation(s, false, scale, bias, pos_weight, ds, dscale, dbias);
    const double t = bce_orientation(s, true, scale, bias, pos_weight, ds, dscale, dbias);
    return 0.5 * (a + t);
}

double infonce_forward_backward(const Matrix& s, double temperature, Matrix* ds) {
    require_square(s);
    require_finite(s);
    if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
    const std::size_t b = s.rows;
    const double inv_b = 1.0 / static_cast<double>(b);
    double total = 0.0;
    Vector z(b);
    for (int orient = 0; orient < 2; ++orient) {
        double part = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < b; ++j) z[j] = (orient == 0 ? s(i, j) : s(j, i)) / temperature;
            const double mx = *std::max_element(z.begin(), z.end());
            double se = 0.0;
            for (double v : z) se += std::exp(v - mx);
            const double lse = mx + std::log(se);
            part += lse - z[i];
            if (ds) {
                for (std::size_t j = 0; j < b; ++j) {
                    const double g = 0.5 * inv_b * (std::exp(z[j] - lse) - (i == j ? 1.0 : 0.0)) / temperature;
                    (orient == 0 ? (*ds)(i, j) : (*ds)(j, i)) += g;
                }
            }
        }
        total += 0.5 * part * inv_b;
    }
    return total;
}

struct Forward {
    std::vector<Vector> fused;   // unnormalized fused docs
    Vector fused_norm;
    Matrix q_hat;                // normalized queries
    Matrix f_hat;                // normalized fused docs
    Matrix s;
};

Forward forward(const TrainingBatch& batch, const fusion::FusionParams& params) {
    batch.validate();
    const std::size_t b = batch.size(), d = batch.text.cols;
    if (d != params.dim) throw ArgumentError("batch dim does not match fusion params");
    Forward fw;
    fw.q_hat = Matrix(b, d);
    fw.f_hat = Matrix(b, d);
    fw.fused_norm.assign(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const auto q = batch.query.row(i);
        const double nq = norm(q);
        if (!(nq > 0.0)) throw ArgumentError("zero-norm query row " + std::to_string(i));
        for (std::size_t k = 0; k < d; ++k) fw.q_hat(i, k) = q[k] / nq;

        fw.fused.push_back(fusion::fuse(batch.text.row(i), batch.image.row(i), params));
        const double nf = norm(fw.fused.back());
        if (!(nf > 0.0)) throw ArgumentError("zero-norm fused document for '" + batch.doc_ids[i] + "'");
        fw.fused_norm[i] = nf;
        for (std::size_t k = 0; k < d; ++k) fw.f_hat(i, k) = fw.fused.back()[k] / nf;
    }
    fw.s = Matrix(b, b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) fw.s(i, j) = std::clamp(dot(fw.q_hat.row(i), fw.f_hat.row(j)), -1.0, 1.0);
    return fw;
}

double resolved_pos_weight(const TrainConfig& config, std::size_t b) {
    return config.pos_weight ? *config.pos_weight : default_pos_weight(b);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ArgumentError(std::string("train config: bad value for '") + key + "'");
    }
}

std::string list_ids(const std::vector<std::string>& ids) {
    std::string out;
    const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) out += (i ? ", " : "") + ids[i];
    if (ids.size() > shown) out += ", and " + std::to_string(ids.size() - shown) + " more";
    return out;
}

}  // namespace

std::string_view to_string(Loss l) { return l == Loss::infonce ? "infonce" : "bce"; }

Loss parse_loss(std::string_view s) {
    if (s == "bce") return Loss::bce;
    if (s == "infonce") return Loss::infonce;
    throw ArgumentError("unknown loss: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ArgumentError("train config: " + m); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        fail("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) fail("warmup_frac must lie in [0, 1]");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (patience_epochs < 1) fail("patience_epochs must be >= 1");
    if (pos_weight && !(*pos_weight > 0.0)) fail("pos_weight must be positive");
    if (!(temperature > 0.0)) fail("temperature must be positive");
    if (!(alpha_init >= 0.0 && alpha_init <= 1.0)) fail("alpha_init must lie in [0, 1]");
    if (!(logit_scale_init > 0.0)) fail("logit_scale_init must be positive");
    if (!std::isfinite(logit_bias_init)) fail("logit_bias_init must be finite");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["loss"] = to_string(loss);
    j["mode"] = fusion::to_string(mode);
    j["hidden"] = hidden;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["warmup_frac"] = warmup_frac;
    j["max_epochs"] = max_epochs;
    j["patience_epochs"] = patience_epochs;
    j["pos_weight"] = pos_weight ? nlohmann::json(*pos_weight) : nlohmann::json(nullptr);
    j["temperature"] = temperature;
    j["alpha_init"] = alpha_init;
    j["logit_scale_init"] = logit_scale_init;
    j["logit_bias_init"] = logit_bias_init;
    j["freeze_logit"] = freeze_logit;
    j["seed"] = seed;
    return j;
}

void TrainConfig::merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ArgumentError("train config must be a JSON object");
    static const std::unordered_set<std::string> known{
        "loss",        "mode",       "hidden",          "batch_size", "lr",          "weight_decay",
        "adam_beta1",  "adam_beta2", "adam_eps",        "warmup_frac", "max_epochs", "patience_epochs",
        "pos_weight",  "temperature", "alpha_init",     "logit_scale_init", "logit_bias_init", "freeze_logit",
        "seed"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ArgumentError("train config: unknown field '" + key + "'");

    std::string name;
    if (j.contains("loss")) {
        read_field(j, "loss", name);
        loss = parse_loss(name);
    }
    if (j.contains("mode")) {
        read_field(j, "mode", name);
        mode = fusion::parse_mode(name);
    }
    read_field(j, "hidden", hidden);
    read_field(j, "batch_size", batch_size);
    read_field(j, "lr", lr);
    read_field(j, "weight_decay", weight_decay);
    read_field(j, "adam_beta1", adam_beta1);
    read_field(j, "adam_beta2", adam_beta2);
    read_field(j, "adam_eps", adam_eps);
    read_field(j, "warmup_frac", warmup_frac);
    read_field(j, "max_epochs", max_epochs);
    read_field(j, "patience_epochs", patience_epochs);
    if (j.contains("pos_weight")) {
        if (j["pos_weight"].is_null()) {
            pos_weight.reset();
        } else {
            double pw = 0.0;
            read_field(j, "pos_weight", pw);
            pos_weight = pw;
        }
    }
    read_field(j, "temperature", temperature);
    read_field(j, "alpha_init", alpha_init);
    read_field(j, "logit_scale_init", logit_scale_init);
    read_field(j, "logit_bias_init", logit_bias_init);
    read_field(j, "freeze_logit", freeze_logit);
    read_field(j, "seed", seed);
    validate();
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.merge_json(j);
    return c;
}

// ---------------------------------------------------------------------------
// Losses

void TrainingBatch::validate() const {
    const std::size_t b = doc_ids.size();
    if (b == 0) throw ArgumentError("empty training batch");
    if (query.rows != b || text.rows != b || image.rows != b)
        throw ArgumentError("training batch matrices disagree on B");
    if (query.cols != text.cols || text.cols != image.cols || text.cols == 0)
        throw ArgumentError("training batch matrices disagree on dim");
}

Matrix similarity_matrix(const TrainingBatch& batch, const fusion::FusionParams& params) {
    return forward(batch, params).s;
}

double bce_loss(const Matrix& s, double scale, double bias, double pos_weight) {
    return bce_forward_backward(s, scale, bias, pos_weight, nullptr, nullptr, nullptr);
}

double infonce_loss(const Matrix& s, double temperature) { return infonce_forward_backward(s, temperature, nullptr); }

double default_pos_weight(std::size_t batch_size) {
    return batch_size >= 2 ? static_cast<double>(batch_size - 1) : 1.0;
}

double loss_value(const TrainingBatch& batch, const fusion::FusionParams& params, const TrainConfig& config) {
    const auto fw = forward(batch, params);
    if (config.loss == Loss::infonce) return infonce_loss(fw.s, config.temperature);
    return bce_loss(fw.s, params.logit_scale(), params.bias, resolved_pos_weight(config, batch.size()));
}

LossAndGrad loss_grad(const TrainingBatch& batch, const fusion::FusionParams& params, const TrainConfig& config) {
    const auto fw = forward(batch, params);
    const std::size_t b = batch.size(), d = params.dim;
    LossAndGrad out;
    out.grad.assign(params.num_params(), 0.0);

    Matrix ds(b, b);
    if (config.loss == Loss::infonce) {
        out.loss = infonce_forward_backward(fw.s, config.temperature, &ds);
    } else {
        const double scale = params.logit_scale();
        double dscale = 0.0, dbias = 0.0;
        out.loss = bce_forward_backward(fw.s, scale, params.bias, resolved_pos_weight(config, b), &ds, &dscale,
                                        &dbias);
        if (!config.freeze_logit) {
            out.grad[1] = dscale * scale;  // d/d scale_raw through exp
            out.grad[2] = dbias;
        }
    }

    // dS_ij/df_j = (q_hat_i - S_ij f_hat_j) / |f_j|
    Vector upstream(d);
    for (std::size_t j = 0; j < b; ++j) {
        std::fill(upstream.begin(), upstream.end(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            const double g = ds(i, j);
            if (g == 0.0) continue;
            const double sij = dot(fw.q_hat.row(i), fw.f_hat.row(j));
            for (std::size_t k = 0; k < d; ++k) upstream[k] += g * (fw.q_hat(i, k) - sij * fw.f_hat(j, k));
        }
        for (auto& u : upstream) u /= fw.fused_norm[j];
        const auto fg = fusion::fuse_grad(batch.text.row(j), batch.image.row(j), params, upstream);
        fusion::accumulate(fg, params, out.grad);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data

std::vector<Pair> multi_query_pairing(const corpus::Document& doc) {
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < doc.queries.size(); ++k) pairs.push_back({embeddings::query_id(doc.id, k), doc.id});
    return pairs;
}

TrainingBatch Dataset::batch(std::span<const std::size_t> query_rows) const {
    TrainingBatch b;
    const std::size_t n = query_rows.size(), d = dim();
    b.query = Matrix(n, d);
    b.text = Matrix(n, d);
    b.image = Matrix(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t qi = query_rows[r];
        const std::size_t di = query_doc.at(qi);
        std::copy_n(query.row(qi).begin(), d, b.query.row(r).begin());
        std::copy_n(text.row(di).begin(), d, b.text.row(r).begin());
        std::copy_n(image.row(di).begin(), d, b.image.row(r).begin());
        b.doc_ids.push_back(doc_ids[di]);
    }
    return b;
}

Dataset build_dataset(const std::vector<std::string>& doc_ids, const embeddings::EmbeddingStore& text,
                      const embeddings::EmbeddingStore& image, const embeddings::EmbeddingStore& query) {
    using embeddings::Kind;
    if (text.kind() != Kind::text || image.kind() != Kind::image || query.kind() != Kind::query)
        throw ArgumentError("build_dataset needs text, image and query stores in that order");
    if (text.dim() != image.dim() || text.dim() != query.dim())
        throw DataError("embedding dims differ: text " + std::to_string(text.dim()) + ", image " +
                        std::to_string(image.dim()) + ", query " + std::to_string(query.dim()));

    const auto groups = embeddings::group_images(image);
    std::map<std::string, std::vector<std::string>> queries_of;
    for (const auto& qid : query.ids()) queries_of[embeddings::doc_of_query(qid)].push_back(qid);

    std::vector<std::string> missing;
    for (const auto& id : doc_ids) {
        if (!text.contains(id)) missing.push_back(id + " (text)");
        if (!groups.count(id)) missing.push_back(id + " (image)");
        if (!queries_of.count(id)) missing.push_back(id + " (query)");
    }
    if (!missing.empty()) throw DataError("misaligned stores; missing embeddings for " + list_ids(missing));

    const std::size_t d = text.dim();
    Dataset ds;
    ds.doc_ids = doc_ids;
    ds.text = Matrix(doc_ids.size(), d);
    ds.image = Matrix(doc_ids.size(), d);
    std::size_t nq = 0;
    for (const auto& id : doc_ids) nq += queries_of.at(id).size();
    ds.query = Matrix(nq, d);

    std::unordered_set<std::string> seen;
    std::size_t qrow = 0;
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
        const auto& id = doc_ids[i];
        if (!seen.insert(id).second) throw DataError("duplicate document id '" + id + "'");
        auto normalized = [&](const Vector& v, const std::string& what) {
            try {
                return embeddings::l2_normalize(v);
            } catch (const ArgumentError&) {
                throw DataError("zero " + what + " vector for '" + id + "'");
            }
        };
        const auto t = normalized(text.get(id), "text");
        const auto im = normalized(embeddings::mean_pool_images(groups.at(id), image), "pooled image");
        std::copy(t.begin(), t.end(), ds.text.row(i).begin());
        std::copy(im.begin(), im.end(), ds.image.row(i).begin());
        auto qids = queries_of.at(id);
        std::sort(qids.begin(), qids.end());
        for (const auto& qid : qids) {
            const auto q = normalized(query.get(qid), "query");
            std::copy(q.begin(), q.end(), ds.query.row(qrow).begin());
            ds.query_ids.push_back(qid);
            ds.query_doc.push_back(i);
            ++qrow;
        }
    }
    return ds;
}

std::vector<std::string> doc_ids_of(const corpus::Corpus& c) {
    std::vector<std::string> ids;
    ids.reserve(c.docs.size());
    for (const auto& d : c.docs) ids.push_back(d.id);
    return ids;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& query_doc, std::size_t batch_size,
                                                   Rng& rng) {
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    std::vector<std::size_t> order(query_doc.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));

    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> current;
    std::unordered_set<std::size_t> docs_in_current;
    std::deque<std::size_t> deferred;

    auto fits = [&](std::size_t q) { return !docs_in_current.count(query_doc[q]); };
    auto place = [&](std::size_t q) {
        current.push_back(q);
        docs_in_current.insert(query_doc[q]);
    };
    auto close = [&] {
        batches.push_back(std::move(current));
        current.clear();
        docs_in_current.clear();
        for (std::size_t n = deferred.size(); n > 0 && current.size() < batch_size; --n) {
            const std::size_t q = deferred.front();
            deferred.pop_front();
            if (fits(q)) place(q);
            else deferred.push_back(q);
        }
    };

    for (std::size_t q : order) {
        if (current.size() == batch_size) close();
        if (fits(q)) place(q);
        else deferred.push_back(q);
    }
    while (!current.empty() || !deferred.empty()) {
        if (current.empty()) {
            place(deferred.front());
            deferred.pop_front();
        }
        close();
    }
    return batches;
}

std::vector<std::size_t> rank_within(const Dataset& data, const fusion::FusionParams& params) {
    const std::size_t n = data.num_docs(), d = data.dim();
    Matrix docs(n, d);
    for (std::size_t j = 0; j < n; ++j) {
        auto f = fusion::fuse(data.text.row(j), data.image.row(j), params);
        const double nf = norm(f);
        if (!(nf > 0.0)) throw ArgumentError("zero-norm fused document for '" + data.doc_ids[j] + "'");
        for (std::size_t k = 0; k < d; ++k) docs(j, k) = f[k] / nf;
    }
    std::vector<std::size_t> ranks(data.num_queries());
    Vector scores(n);
    for (std::size_t qi = 0; qi < data.num_queries(); ++qi) {
        for (std::size_t j = 0; j < n; ++j) scores[j] = dot(data.query.row(qi), docs.row(j));
        const std::size_t rel = data.query_doc[qi];
        std::size_t rank = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == rel) continue;
            if (scores[j] > scores[rel] || (scores[j] == scores[rel] && data.doc_ids[j] < data.doc_ids[rel])) ++rank;
        }
        ranks[qi] = rank;
    }
    return ranks;
}

double validation_mrr10(const Dataset& data, const fusion::FusionParams& params) {
    const auto r = rank_within(data, params);
    std::vector<metrics::Rank> ranks(r.begin(), r.end());
    return metrics::mrr_at_10(ranks);
}

double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    if (step >= total_steps) return 0.0;
    const auto warmup = static_cast<std::size_t>(std::llround(config.warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup) return config.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const std::size_t span = total_steps - warmup;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Training loop

std::string TrainLog::to_jsonl() const {
    std::string out;
    auto line = [&](const nlohmann::ordered_json& j) {
        out += j.dump();
        out += '\n';
    };
    line({{"type", "run"}, {"loss", loss}, {"mode", mode}});
    std::size_t next_step = 0;
    for (const auto& e : epochs) {
        while (next_step < steps.size() && steps[next_step].epoch <= e.epoch) {
            const auto& s = steps[next_step++];
            line({{"type", "step"}, {"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"lr", s.lr}});
        }
        line({{"type", "epoch"},
              {"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"val_loss", e.val_loss},
              {"val_mrr10", e.val_mrr10}});
    }
    line({{"type", "best"}, {"epoch", best_epoch}, {"val_mrr10", best_val_mrr10}, {"early_stopped", early_stopped}});
    return out;
}

fusion::FusionParams initial_params(const TrainConfig& config, std::size_t dim) {
    Rng rng(config.seed);
    auto p = config.mode == fusion::Mode::mlp ? fusion::FusionParams::mlp(dim, rng, config.hidden)
                                              : fusion::FusionParams::weighted_sum(dim);
    p.set_alpha(config.alpha_init);
    p.scale_raw = std::log(config.logit_scale_init);
    p.bias = config.logit_bias_init;
    return p;
}

TrainResult train(const Dataset& train_set, const Dataset& valid_set, const TrainConfig& config) {
    config.validate();
    if (train_set.num_queries() == 0) throw ArgumentError("empty training set");
    if (valid_set.num_queries() == 0) throw ArgumentError("empty validation set");
    if (train_set.dim() != valid_set.dim()) throw ArgumentError("train and validation dims differ");

    auto params = initial_params(config, train_set.dim());
    const auto decay = params.decay_mask();
    const std::size_t n = params.num_params();
    Vector flat = params.pack(), m(n, 0.0), v(n, 0.0);

    Rng rng(config.seed ^ 0x5bd1e995u);
    Rng valid_rng(config.seed ^ 0x27d4eb2fu);
    const auto valid_batches = make_batches(valid_set.query_doc, config.batch_size, valid_rng);
    const std::size_t per_epoch = (train_set.num_queries() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = per_epoch * config.max_epochs;

    TrainResult result{params, {}};
    TrainLog& log = result.log;
    log.loss = to_string(config.loss);
    log.mode = fusion::to_string(config.mode);

    auto validation_loss = [&] {
        double sum = 0.0;
        for (const auto& rows : valid_batches) sum += loss_value(valid_set.batch(rows), params, config);
        return sum / static_cast<double>(valid_batches.size());
    };

    double best_mrr = -1.0, best_loss = 0.0;
    std::size_t since_best = 0, step = 0;
    double b1_pow = 1.0, b2_pow = 1.0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        double epoch_loss = 0.0;
        const auto batches = make_batches(train_set.query_doc, config.batch_size, rng);
        for (const auto& rows : batches) {
            const auto lg = loss_grad(train_set.batch(rows), params, config);
            const double lr = scheduled_lr(config, step, total_steps);
            bool finite = std::isfinite(lg.loss);
            for (double g : lg.grad) finite = finite && std::isfinite(g);
            if (!finite) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", step " << step << " (loss " << lg.loss << ", lr "
                    << lr << ", alpha " << params.alpha() << ", logit scale " << params.logit_scale() << ", bias "
                    << params.bias << ", batch of " << rows.size() << ")";
                throw Error(msg.str());
            }

            b1_pow *= config.adam_beta1;
            b2_pow *= config.adam_beta2;
            for (std::size_t k = 0; k < n; ++k) {
                const double g = lg.grad[k];
                m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g;
                v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g * g;
                const double m_hat = m[k] / (1.0 - b1_pow);
                const double v_hat = v[k] / (1.0 - b2_pow);
                if (decay[k]) flat[k] -= lr * config.weight_decay * flat[k];
                flat[k] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
            }
            params.unpack(flat);

            log.steps.push_back({step, epoch, lg.loss, lr});
            epoch_loss += lg.loss;
            ++step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(batches.size());
        rec.val_mrr10 = validation_mrr10(valid_set, params);
        rec.val_loss = validation_loss();
        log.epochs.push_back(rec);

        const bool improved =
            rec.val_mrr10 > best_mrr || (rec.val_mrr10 == best_mrr && rec.val_loss < best_loss);
        if (improved) {
            best_mrr = rec.val_mrr10;
            best_loss = rec.val_loss;
            result.params = params;
            log.best_epoch = epoch;
            log.best_val_mrr10 = rec.val_mrr10;
            since_best = 0;
        } else if (++since_best >= config.patience_epochs) {
            log.early_stopped = true;
            break;
        }
    }
    return result;
}

}  // namespace docmmir::train
