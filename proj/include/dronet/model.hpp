#pragma once
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dronet::model {

enum class BlockKind { RB, DP, IRLB };

enum class LayerKind { conv2d, depthwise, pointwise, batchnorm, relu6, maxpool, fully_connected };

const char* to_string(BlockKind k);
const char* to_string(LayerKind k);
BlockKind block_kind_from_string(const std::string& s);
LayerKind layer_kind_from_string(const std::string& s);

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Architecture selector: block family, optional bypass branch, width divisor.
struct ArchConfig {
    BlockKind block_kind = BlockKind::DP;
    bool use_bypass = false;
    int gamma = 1;          // divides the (32,64,128) channel plan
    int expansion = 6;      // IRLB only
    int in_h = 200, in_w = 200, in_ch = 1;

    void validate() const;
};

struct LayerSpec {
    LayerKind kind = LayerKind::conv2d;
    int kernel = 1, stride = 1, pad = 0;
    int in_ch = 0, out_ch = 0;
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

// computes output extent per the layer arithmetic; throws on non-positive result
int conv_out_extent(int in, int kernel, int stride, int pad);

struct LayerNode {
    std::string name;
    LayerSpec spec;
};

// One residual-style block: main branch plus optional 1x1 bypass branch.
// When the bypass is present the block output is the elementwise sum of the
// two branch outputs (shapes always identical by construction).
struct Block {
    std::vector<LayerNode> main;
    std::vector<LayerNode> bypass;
    bool has_bypass = false;
};

struct ModelGraph {
    ArchConfig config;
    std::vector<LayerNode> stem;
    std::array<Block, 3> blocks;
    LayerNode head_yaw;   // fully_connected, linear output
    LayerNode head_coll;  // fully_connected, sigmoid applied downstream
    int head_in = 0;      // flattened feature count feeding each head

    // flattened view in execution order (stem, b0 main, b0 bypass, ..., heads)
    std::vector<const LayerNode*> all_layers() const;
};

ModelGraph build_model(const ArchConfig& config);

// weights + biases + BN affine (scale/shift) parameters
int64_t count_params(const ModelGraph& g);
// conv: oh*ow*oc*(k^2*ic); depthwise: oh*ow*c*k^2; pointwise/fc: oh*ow*oc*ic
int64_t count_macs(const ModelGraph& g);

int64_t layer_params(const LayerSpec& s);
int64_t layer_macs(const LayerSpec& s);

// one row per layer plus totals matching the two counters
std::string summarize(const ModelGraph& g);

// versioned self-describing text format
std::string serialize(const ModelGraph& g);
ModelGraph parse_graph(const std::string& text);
void save_graph(const ModelGraph& g, const std::string& path);
ModelGraph load_graph(const std::string& path);

// round to two significant figures (published-table comparisons)
int64_t round_2sf(int64_t x);

} // namespace dronet::model
