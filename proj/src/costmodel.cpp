#include "sid/costmodel.hpp"

namespace sid {

double transformer_gflops(int64_t size, int64_t channels, int64_t blocks) {
    const double c = static_cast<double>(channels);
    const double s = static_cast<double>(size);
    const double b = static_cast<double>(blocks);
    const double linears = 12.0 * c * c * b * s * s;
    const double attn = 2.0 * s * s * s * s * b * c;
    return (linears + attn) / 1e9;
}

double resblock_gflops(int64_t size, int64_t channels, int64_t blocks) {
    const double c = static_cast<double>(channels);
    const double s = static_cast<double>(size);
    const double b = static_cast<double>(blocks);
    return 2.0 * 9.0 * b * c * c * s * s / 1e9;
}

namespace {

// per-block parameter count within the flop-counting scope
int64_t block_params(BlockKind kind, int64_t c) {
    if (kind == BlockKind::ResBlock) return 2 * 9 * c * c;  // two 3x3 convs
    return 12 * c * c;                                      // q,k,v,out + mlp in/out
}

}  // namespace

CostReport model_cost(const UViTConfig& cfg, int input_res) {
    cfg.validate();
    if (input_res <= 0 || input_res % cfg.patch_size != 0) {
        throw ConfigError("model_cost: patch must divide input_res");
    }
    CostReport rep;
    const int n = cfg.levels();
    for (int l = 0; l < n; ++l) {
        const int64_t size = static_cast<int64_t>(input_res / cfg.patch_size) >> l;
        const int64_t c = cfg.channels[static_cast<size_t>(l)];
        const BlockKind kind = cfg.block_type[static_cast<size_t>(l)];
        const int64_t blocks =
            l < n - 1 ? cfg.num_down_blocks[static_cast<size_t>(l)] +
                            cfg.num_up_blocks[static_cast<size_t>(l)]
                      : cfg.num_mid_blocks;
        const double g = kind == BlockKind::ResBlock ? resblock_gflops(size, c, blocks)
                                                     : transformer_gflops(size, c, blocks);
        const std::string name = "level" + std::to_string(l) + " " +
                                 (kind == BlockKind::ResBlock ? "resblock" : "transformer") +
                                 " s" + std::to_string(size) + " c" + std::to_string(c) + " b" +
                                 std::to_string(blocks);
        rep.stages.push_back({name, g});
        rep.forward_gflops += g;
        rep.params += blocks * block_params(kind, c);
    }
    rep.train_step_gflops = 3.0 * rep.forward_gflops;
    rep.flops_per_param =
        rep.params > 0 ? rep.forward_gflops * 1e9 / static_cast<double>(rep.params) : 0.0;
    return rep;
}

int64_t skip_memory(const UViTConfig& cfg, int input_res, SkipScheme scheme, int batch) {
    return skip_memory_bytes(cfg, input_res, scheme, batch);
}

}  // namespace sid
