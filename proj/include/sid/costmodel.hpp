#pragma once

// FLOP and activation-memory accounting. Multiply-adds count as ONE flop, a
// training step costs 3x a forward pass, and only matmul / conv / attention
// terms are counted (everything else is within 1% for these architectures).

#include <string>
#include <vector>

#include "sid/uvit.hpp"

namespace sid {

// per-block transformer cost at a square feature map of side `size`:
// linears = 12 C^2 blocks size^2 (q,k,v,attn_out + mlp 4x in / 4x out),
// attn = 2 size^4 blocks C (the dot products)
double transformer_gflops(int64_t size, int64_t channels, int64_t blocks);

// 2 layers of 3x3 conv: 2 * 9 * blocks * C^2 * size^2
double resblock_gflops(int64_t size, int64_t channels, int64_t blocks);

struct CostReport {
    struct Stage {
        std::string name;
        double gflops;
    };
    std::vector<Stage> stages;
    double forward_gflops = 0.0;
    double train_step_gflops = 0.0;  // 3x forward, exactly
    int64_t params = 0;              // same scope as the flop terms
    double flops_per_param = 0.0;    // forward flops / params
};

// Stage costs per level with the patched input size propagated through
// pooling. `params` counts only the weights of the counted ops (block
// matmuls/convs), which makes patch-size changes parameter-neutral.
CostReport model_cost(const UViTConfig& cfg, int input_res);

// re-export of the activation-memory accounting for reports
int64_t skip_memory(const UViTConfig& cfg, int input_res, SkipScheme scheme, int batch = 1);

}  // namespace sid
