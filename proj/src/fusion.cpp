#include "docmmir/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "docmmir/binary_io.hpp"
#include "docmmir/error.hpp"

namespace docmmir::fusion {

namespace {

constexpr std::string_view kFormat = "docmmir-fusion";
constexpr int kVersion = 1;

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_inputs(std::span<const double> text, std::span<const double> img, const FusionParams& p) {
    if (text.size() != p.dim || img.size() != p.dim)
        throw ArgumentError("fusion dimension mismatch: text " + std::to_string(text.size()) + ", image " +
                            std::to_string(img.size()) + ", params " + std::to_string(p.dim));
}

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::mlp ? "mlp" : "weighted_sum"; }

Mode parse_mode(std::string_view s) {
    if (s == "weighted_sum") return Mode::weighted_sum;
    if (s == "mlp") return Mode::mlp;
    throw ArgumentError("unknown fusion mode: " + std::string(s));
}

double FusionParams::alpha() const { return sigmoid(alpha_raw); }
double FusionParams::logit_scale() const { return std::exp(scale_raw); }

void FusionParams::set_alpha(double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
    // sigmoid saturates to exactly 0 or 1 in double well before +/-800.
    if (a == 0.0) alpha_raw = -800.0;
    else if (a == 1.0) alpha_raw = 800.0;
    else alpha_raw = std::log(a / (1.0 - a));
}

FusionParams FusionParams::weighted_sum(std::size_t dim) {
    FusionParams p;
    p.mode = Mode::weighted_sum;
    p.dim = dim;
    p.scale_raw = std::log(kDefaultLogitScale);
    p.bias = kDefaultLogitBias;
    return p;
}

FusionParams FusionParams::mlp(std::size_t dim, Rng& rng, std::size_t hidden) {
    FusionParams p = weighted_sum(dim);
    p.mode = Mode::mlp;
    p.hidden = hidden == 0 ? dim : hidden;
    p.w1 = Matrix(p.hidden, 2 * dim);
    p.b1 = Vector(p.hidden, 0.0);
    p.w2 = Matrix(dim, p.hidden);
    p.b2 = Vector(dim, 0.0);
    const double lim1 = 1.0 / std::sqrt(static_cast<double>(2 * dim));
    const double lim2 = 1.0 / std::sqrt(static_cast<double>(p.hidden));
    for (auto& w : p.w1.data) w = rng.uniform(-lim1, lim1);
    for (auto& w : p.w2.data) w = rng.uniform(-lim2, lim2);
    return p;
}

void FusionParams::validate() const {
    if (dim == 0) throw ArgumentError("fusion dim must be positive");
    if (!std::isfinite(alpha_raw) || !std::isfinite(scale_raw) || !std::isfinite(bias))
        throw ArgumentError("non-finite fusion scalar");
    if (mode == Mode::mlp) {
        if (hidden == 0) throw ArgumentError("mlp hidden width must be positive");
        if (w1.rows != hidden || w1.cols != 2 * dim || b1.size() != hidden || w2.rows != dim || w2.cols != hidden ||
            b2.size() != dim)
            throw ArgumentError("mlp weight shapes inconsistent with dim/hidden");
    }
}

std::size_t FusionParams::num_params() const {
    std::size_t n = 3;
    if (mode == Mode::mlp) n += w1.data.size() + b1.size() + w2.data.size() + b2.size();
    return n;
}

Vector FusionParams::pack() const {
    Vector flat{alpha_raw, scale_raw, bias};
    if (mode == Mode::mlp) {
        flat.insert(flat.end(), w1.data.begin(), w1.data.end());
        flat.insert(flat.end(), b1.begin(), b1.end());
        flat.insert(flat.end(), w2.data.begin(), w2.data.end());
        flat.insert(flat.end(), b2.begin(), b2.end());
    }
    return flat;
}

void FusionParams::unpack(std::span<const double> flat) {
    if (flat.size() != num_params()) throw ArgumentError("flat parameter size mismatch");
    alpha_raw = flat[0];
    scale_raw = flat[1];
    bias = flat[2];
    if (mode == Mode::mlp) {
        auto it = flat.begin() + 3;
        auto take = [&](std::vector<double>& dst) {
            std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
            it += static_cast<std::ptrdiff_t>(dst.size());
        };
        take(w1.data);
        take(b1);
        take(w2.data);
        take(b2);
    }
}

std::vector<bool> FusionParams::decay_mask() const {
    std::vector<bool> mask(num_params(), false);
    if (mode == Mode::mlp) {
        const std::size_t w1_begin = 3;
        const std::size_t w2_begin = w1_begin + w1.data.size() + b1.size();
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(w1_begin),
                  mask.begin() + static_cast<std::ptrdiff_t>(w1_begin + w1.data.size()), true);
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(w2_begin),
                  mask.begin() + static_cast<std::ptrdiff_t>(w2_begin + w2.data.size()), true);
    }
    return mask;
}

Vector fuse(std::span<const double> text, std::span<const double> img, const FusionParams& p) {
    check_inputs(text, img, p);
    const std::size_t d = p.dim;
    Vector out(d);
    if (p.mode == Mode::weighted_sum) {
        const double a = p.alpha();
        for (std::size_t k = 0; k < d; ++k) out[k] = a * text[k] + (1.0 - a) * img[k];
        return out;
    }
    Vector hidden(p.hidden);
    for (std::size_t r = 0; r < p.hidden; ++r) {
        const auto w = p.w1.row(r);
        double z = p.b1[r];
        for (std::size_t k = 0; k < d; ++k) z += w[k] * text[k] + w[d + k] * img[k];
        hidden[r] = z > 0.0 ? z : 0.0;
    }
    for (std::size_t r = 0; r < d; ++r) out[r] = p.b2[r] + dot(p.w2.row(r), std::span<const double>(hidden));
    return out;
}

FusionGrad fuse_grad(std::span<const double> text, std::span<const double> img, const FusionParams& p,
                     std::span<const double> upstream) {
    check_inputs(text, img, p);
    if (upstream.size() != p.dim) throw ArgumentError("upstream gradient dimension mismatch");
    const std::size_t d = p.dim;
    FusionGrad g;
    g.text.assign(d, 0.0);
    g.img.assign(d, 0.0);

    if (p.mode == Mode::weighted_sum) {
        const double a = p.alpha();
        for (std::size_t k = 0; k < d; ++k) {
            g.alpha += upstream[k] * (text[k] - img[k]);
            g.text[k] = a * upstream[k];
            g.img[k] = (1.0 - a) * upstream[k];
        }
        g.alpha_raw = g.alpha * a * (1.0 - a);
        return g;
    }

    const std::size_t h = p.hidden;
    Vector z(h), act(h);
    for (std::size_t r = 0; r < h; ++r) {
        const auto w = p.w1.row(r);
        double s = p.b1[r];
        for (std::size_t k = 0; k < d; ++k) s += w[k] * text[k] + w[d + k] * img[k];
        z[r] = s;
        act[r] = s > 0.0 ? s : 0.0;
    }
    g.b2.assign(upstream.begin(), upstream.end());
    g.w2 = Matrix(d, h);
    Vector dact(h, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const auto w = p.w2.row(r);
        for (std::size_t c = 0; c < h; ++c) {
            g.w2(r, c) = upstream[r] * act[c];
            dact[c] += w[c] * upstream[r];
        }
    }
    g.b1.assign(h, 0.0);
    g.w1 = Matrix(h, 2 * d);
    for (std::size_t r = 0; r < h; ++r) {
        const double dz = z[r] > 0.0 ? dact[r] : 0.0;
        g.b1[r] = dz;
        if (dz == 0.0) continue;
        const auto w = p.w1.row(r);
        for (std::size_t k = 0; k < d; ++k) {
            g.w1(r, k) = dz * text[k];
            g.w1(r, d + k) = dz * img[k];
            g.text[k] += w[k] * dz;
            g.img[k] += w[d + k] * dz;
        }
    }
    return g;
}

void accumulate(const FusionGrad& g, const FusionParams& p, std::span<double> flat) {
    if (flat.size() != p.num_params()) throw ArgumentError("flat gradient size mismatch");
    flat[0] += g.alpha_raw;
    if (p.mode != Mode::mlp) return;
    std::size_t off = 3;
    auto add = [&](const std::vector<double>& src) {
        for (std::size_t i = 0; i < src.size(); ++i) flat[off + i] += src[i];
        off += src.size();
    };
    add(g.w1.data);
    add(g.b1);
    add(g.w2.data);
    add(g.b2);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ArgumentError("cosine dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw ArgumentError("cosine of a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string serialize_checkpoint(const FusionParams& p, const nlohmann::json& extra) {
    p.validate();
    nlohmann::ordered_json header;
    header["format"] = kFormat;
    header["version"] = kVersion;
    header["mode"] = to_string(p.mode);
    header["d"] = p.dim;
    header["h"] = p.hidden;
    header["alpha_raw"] = p.alpha_raw;
    header["scale_raw"] = p.scale_raw;
    header["bias"] = p.bias;
    header["alpha"] = p.alpha();
    header["logit_scale"] = p.logit_scale();
    if (p.mode == Mode::mlp) {
        header["payload"] = {{"dtype", "f64le"},
                             {"tensors", {{{"name", "w1"}, {"shape", {p.hidden, 2 * p.dim}}},
                                          {{"name", "b1"}, {"shape", {p.hidden}}},
                                          {{"name", "w2"}, {"shape", {p.dim, p.hidden}}},
                                          {{"name", "b2"}, {"shape", {p.dim}}}}}};
    }
    if (!extra.is_null()) header["meta"] = extra;

    io::ByteWriter w;
    w.bytes(header.dump());
    w.u8('\n');
    if (p.mode == Mode::mlp) {
        const auto flat = p.pack();
        for (std::size_t i = 3; i < flat.size(); ++i) w.f64(flat[i]);
    }
    return std::move(w).take();
}

FusionParams deserialize_checkpoint(std::string_view bytes, nlohmann::json* header_out) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw DataError("checkpoint header not terminated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != kFormat) throw DataError("not a fusion checkpoint");
    if (header.value("version", 0) != kVersion) throw DataError("unsupported checkpoint version");

    FusionParams p;
    try {
        p.mode = parse_mode(header.at("mode").get<std::string>());
        p.dim = header.at("d").get<std::size_t>();
        p.hidden = header.at("h").get<std::size_t>();
        p.alpha_raw = header.at("alpha_raw").get<double>();
        p.scale_raw = header.at("scale_raw").get<double>();
        p.bias = header.at("bias").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    } catch (const ArgumentError& e) {
        throw DataError(e.what());
    }

    io::ByteReader r(bytes.substr(nl + 1));
    if (p.mode == Mode::mlp) {
        p.w1 = Matrix(p.hidden, 2 * p.dim);
        p.b1 = Vector(p.hidden);
        p.w2 = Matrix(p.dim, p.hidden);
        p.b2 = Vector(p.dim);
        Vector flat(p.num_params());
        flat[0] = p.alpha_raw;
        flat[1] = p.scale_raw;
        flat[2] = p.bias;
        for (std::size_t i = 3; i < flat.size(); ++i) flat[i] = r.f64();
        p.unpack(flat);
    }
    if (!r.at_end()) throw DataError("trailing bytes in checkpoint");
    try {
        p.validate();
    } catch (const ArgumentError& e) {
        throw DataError(e.what());
    }
    if (header_out) *header_out = std::move(header);
    return p;
}

void save_checkpoint(const FusionParams& p, const std::string& path, const nlohmann::json& extra) {
    io::write_file_atomic(path, serialize_checkpoint(p, extra));
}

FusionParams load_checkpoint(const std::string& path, nlohmann::json* header) {
    const auto bytes = io::read_file(path);
    try {
        return deserialize_checkpoint(bytes, header);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace docmmir::fusion
