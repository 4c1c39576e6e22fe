#pragma once

// Late fusion of a document's text vector and pooled image vector.
//
// weighted_sum:  doc = alpha * text + (1 - alpha) * image,  alpha = sigmoid(alpha_raw)
// mlp:           doc = W2 * relu(W1 * [text; image] + b1) + b2
//
// Both modes also carry the logit scale (exp(scale_raw)) and bias that the
// BCE objective applies to cosine similarities before the sigmoid.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "docmmir/linalg.hpp"
#include "docmmir/random.hpp"

namespace docmmir::fusion {

enum class Mode { weighted_sum, mlp };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

inline constexpr double kDefaultLogitScale = 10.0;
inline constexpr double kDefaultLogitBias = -5.0;

struct FusionParams {
    Mode mode = Mode::weighted_sum;
    std::size_t dim = 0;
    std::size_t hidden = 0;

    double alpha_raw = 0.0;
    double scale_raw = 0.0;
    double bias = 0.0;

    Matrix w1;  ///< hidden x 2*dim
    Vector b1;  ///< hidden
    Matrix w2;  ///< dim x hidden
    Vector b2;  ///< dim

    double alpha() const;
    double logit_scale() const;

    /// Sets alpha_raw so that alpha() == a exactly, including the endpoints 0 and 1.
    void set_alpha(double a);

    /// alpha = 0.5, scale 10, bias -5.
    static FusionParams weighted_sum(std::size_t dim);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. hidden = 0 means hidden = dim.
    static FusionParams mlp(std::size_t dim, Rng& rng, std::size_t hidden = 0);

    /// Throws ArgumentError if matrix shapes disagree with dim/hidden.
    void validate() const;

    /// Flat view used by the optimizer and by finite-difference checks:
    /// [alpha_raw, scale_raw, bias, w1 (row-major), b1, w2 (row-major), b2].
    /// The MLP block is present only in mlp mode.
    std::size_t num_params() const;
    Vector pack() const;
    void unpack(std::span<const double> flat);

    /// True for entries that receive weight decay (the MLP weight matrices).
    std::vector<bool> decay_mask() const;

    bool operator==(const FusionParams&) const = default;
};

/// Gradients of <upstream, fuse(text, img)>; same flat layout as FusionParams::pack().
struct FusionGrad {
    double alpha = 0.0;      ///< d/d alpha
    double alpha_raw = 0.0;  ///< d/d alpha_raw (chain through the sigmoid)
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Vector text;
    Vector img;
};

Vector fuse(std::span<const double> text, std::span<const double> img, const FusionParams& params);

FusionGrad fuse_grad(std::span<const double> text, std::span<const double> img, const FusionParams& params,
                     std::span<const double> upstream);

/// Adds the parameter part of `g` into a flat gradient laid out like FusionParams::pack().
void accumulate(const FusionGrad& g, const FusionParams& params, std::span<double> flat);

/// <a, b> / (|a| |b|), clamped to [-1, 1]. Throws ArgumentError on a zero vector.
double cosine(std::span<const double> a, std::span<const double> b);
inline double cosine(const Vector& a, const Vector& b) {
    return cosine(std::span<const double>(a), std::span<const double>(b));
}

// Checkpoint: one JSON header line (mode, dims, raw scalars, payload layout)
// followed by the MLP tensors as float64 little-endian in pack() order.
std::string serialize_checkpoint(const FusionParams& params, const nlohmann::json& extra = {});
FusionParams deserialize_checkpoint(std::string_view bytes, nlohmann::json* header = nullptr);
void save_checkpoint(const FusionParams& params, const std::string& path, const nlohmann::json& extra = {});
FusionParams load_checkpoint(const std::string& path, nlohmann::json* header = nullptr);

}  // namespace docmmir::fusion
