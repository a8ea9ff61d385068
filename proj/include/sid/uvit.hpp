#pragma once

// Residual U-ViT denoiser: one skip per resolution level,
//   f(x) = f_u( U( f_m(D(h)) - D(h) ) + h ),  h = f_d(x),
// recursively nested. Every block's output projection is zero-initialized and
// D/U are bias-free, so the whole core is an identity function at
// initialization. A blockwise-skip variant (classic U-Net concat skips) sits
// behind a flag for the memory comparison and ablations.

#include <string>
#include <variant>
#include <vector>

#include "sid/checkpoint.hpp"
#include "sid/diffusion.hpp"
#include "sid/schedule.hpp"
#include "sid/tensor.hpp"

namespace sid {

enum class BlockKind { ResBlock, Transformer };

struct UViTConfig {
    int image_res = 128;
    int in_channels = 3;
    int patch_size = 1;  // one of {1, 2, 4}
    std::vector<int> channels;
    std::vector<int> num_down_blocks;  // per outer level; size = levels - 1
    std::vector<int> num_up_blocks;    // per outer level; size = levels - 1
    int num_mid_blocks = 0;            // innermost level
    std::vector<BlockKind> block_type;     // per level
    std::vector<double> block_dropout;     // per level
    int num_classes = 0;                   // 0 = unconditional
    int head_dim = 64;                     // attention head width target
    int temb_dim = 0;                      // 0 = auto (4 * channels[0], min 32)
    bool blockwise_skips = false;          // classic concat skips instead of Eq-style residual

    int levels() const { return static_cast<int>(channels.size()); }
    int token_res(int level) const;  // feature-map side length at a level
    int resolved_temb_dim() const;
    int heads_at(int level) const;
    void validate() const;
};

struct ParamSpec {
    std::string name;
    Shape shape;
    enum class Init { Zero, One, Normal, SkipSelect } init = Init::Zero;
    double stddev = 0.0;  // Normal only
};

// Full parameter inventory (names, shapes, inits) without allocating data.
// build() materializes exactly this list in this order.
std::vector<ParamSpec> parameter_shapes(const UViTConfig& cfg);

int64_t parameter_count(const UViTConfig& cfg);

namespace detail {
struct UvitParamMaker;
}

class UViT {
public:
    UViT() = default;  // empty shell; use build()
    static UViT build(const UViTConfig& cfg, Rng& rng);

    const UViTConfig& config() const { return cfg_; }

    // z: [N, image_res, image_res, in_channels]; levels: one per example;
    // labels: one per example, -1 = unconditional token (required empty when
    // num_classes == 0); dropout_rng enables block dropout (training only)
    Prediction forward(const Tensor& z, const std::vector<NoiseLevel>& levels,
                       const std::vector<int64_t>& labels, Rng* dropout_rng = nullptr) const;

    // The level recursion alone, at channels[0] width, without the in/out
    // projections: identity at initialization.
    Tensor core_forward(const Tensor& x, const std::vector<NoiseLevel>& levels,
                        Rng* dropout_rng = nullptr) const;

    const NamedTensors& named_params() const { return params_; }
    NamedTensors& named_params() { return params_; }
    int64_t num_params() const;

    void save(const std::string& path) const;
    static UViT load(const std::string& path, const UViTConfig& cfg);

    // zero every parameter of the mid (innermost) level; used to probe the
    // structural claim that inner levels contribute U(f_m(D(h)) - D(h))
    void zero_mid_level();

private:
    friend std::vector<ParamSpec> parameter_shapes(const UViTConfig&);
    static void walk_params(const UViTConfig& cfg, detail::UvitParamMaker& mk, UViT* self);

    struct ResBlockP {
        Tensor ln_g, ln_b;
        Tensor scale_w, scale_b, shift_w, shift_b;
        Tensor conv1_k, conv1_b, conv2_k, conv2_b;
    };
    struct TransformerP {
        Tensor ln1_g, ln1_b;
        Tensor scale1_w, scale1_b, shift1_w, shift1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor scale2_w, scale2_b, shift2_w, shift2_b;
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    using BlockP = std::variant<ResBlockP, TransformerP>;

    struct LevelP {
        std::vector<BlockP> down, up, mid;
        std::vector<Tensor> up_skip_w;  // blockwise variant only; [2C, C]
        Tensor pos;                     // transformer levels only
        Tensor dw, uw;                  // bias-free D / U projections
    };

    Tensor temb_from(const std::vector<NoiseLevel>& levels,
                     const std::vector<int64_t>& labels) const;
    Tensor apply_block(const BlockP& b, const Tensor& x, const Tensor& temb, double drop,
                       Rng* rng) const;
    Tensor level_forward(size_t lev, Tensor x, const Tensor& temb, Rng* rng) const;

    UViTConfig cfg_;
    NamedTensors params_;
    Tensor in_w, in_b, out_w, out_b;
    Tensor temb_w1, temb_b1, temb_w2, temb_b2;
    Tensor class_embed;
    std::vector<LevelP> levels_;
};

// sinusoidal features of the log-SNR, [N, dim]
Tensor logsnr_features(const std::vector<NoiseLevel>& levels, int dim);

// ---------------------------------------------------------------------------
// activation memory accounting (evaluation-time skip retention, 2 bytes/elem)
// ---------------------------------------------------------------------------

enum class SkipScheme { BlockwiseSkip, ResidualSkip };

struct MemoryReport {
    struct LevelMem {
        int level;
        int64_t res;       // feature-map side at this level
        int64_t channels;
        int64_t blockwise_bytes;  // blocks-per-level retained maps
        int64_t residual_bytes;   // h plus D(h)
    };
    std::vector<LevelMem> per_level;
    int64_t blockwise_total = 0;
    int64_t residual_total = 0;
};

// bytes one feature map occupies at evaluation time (2 bytes per element)
int64_t feature_map_bytes(int64_t res, int64_t channels);

MemoryReport activation_memory(const UViTConfig& cfg, int input_res, int batch = 1);

int64_t skip_memory_bytes(const UViTConfig& cfg, int input_res, SkipScheme scheme, int batch = 1);

}  // namespace sid
