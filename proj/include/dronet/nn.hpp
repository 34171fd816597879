#pragma once
#include <map>
#include <string>
#include <vector>

#include "dronet/model.hpp"
#include "dronet/rng.hpp"
#include "dronet/tensor.hpp"

namespace dronet::nn {

using model::LayerKind;
using model::LayerNode;
using model::LayerSpec;
using model::ModelGraph;

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Named parameter store. Convolutions carry only weights (BN follows every
// convolution and absorbs the bias); fully-connected heads carry weight+bias;
// batchnorm carries scale/shift plus running mean/var.
struct Params {
    std::map<std::string, Tensor> t;

    Tensor& at(const std::string& k);
    const Tensor& at(const std::string& k) const;
    bool has(const std::string& k) const { return t.count(k) != 0; }
    Tensor& get_or_zero(const std::string& k, const Tensor& like);
};

Params init_params(const ModelGraph& g, Rng& rng);

// trainable keys in a stable order (excludes BN running stats)
std::vector<std::string> trainable_keys(const Params& p);

void save_checkpoint(const Params& p, const std::string& path);
Params load_checkpoint(const std::string& path);

enum class Mode { train, infer };

// ---- kernels ------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec);
Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const LayerSpec& spec);

struct BnState {
    std::vector<float> batch_mean, batch_inv_std; // captured in train mode
};

// infer: per-channel affine with running stats; train: batch statistics,
// updates running stats in place with momentum
Tensor batchnorm(const Tensor& x, const Tensor& scale, const Tensor& shift, Tensor& run_mean,
                 Tensor& run_var, Mode mode, BnState* state = nullptr);

Tensor relu6(const Tensor& x);
Tensor maxpool2x2(const Tensor& x, std::vector<int>* argmax = nullptr);
// x flattened to (n, features); w is (out, features); b is (out)
Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- backward (analytic, layer by layer) --------------------------------

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                     Tensor& dx, Tensor& dw);
void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                        Tensor& dx, Tensor& dw);
void pointwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const LayerSpec& spec,
                        Tensor& dx, Tensor& dw);
void batchnorm_backward(const Tensor& x, const Tensor& scale, const BnState& st, const Tensor& dy,
                        Tensor& dx, Tensor& dscale, Tensor& dshift);
Tensor relu6_backward(const Tensor& x, const Tensor& dy);
Tensor maxpool_backward(const std::vector<int>& argmax, const Tensor& dy, int in_h, int in_w);
void fully_connected_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                              Tensor& dw, Tensor& db);

// ---- whole-model forward/backward ---------------------------------------

struct LayerTrace {
    Tensor input;
    BnState bn;
    std::vector<int> argmax;
};

struct ForwardTrace {
    std::map<std::string, LayerTrace> layer;
    Tensor head_input;           // flattened features
    std::vector<float> p_coll;   // sigmoid outputs, needed for the BCE chain
    int layer_count = 0;
};

struct ForwardResult {
    std::vector<float> yaw;     // per-sample regression output
    std::vector<float> p_coll;  // per-sample collision probability in [0,1]
};

// x must be (batch, in_ch, in_h, in_w) matching the graph config
ForwardResult model_forward(const ModelGraph& g, Params& p, const Tensor& x, Mode mode,
                            ForwardTrace* trace = nullptr);

// dyaw/dp are dLoss/dyaw and dLoss/dp_coll per sample; returns gradients
// keyed like the trainable params
Params model_backward(const ModelGraph& g, const Params& p, const ForwardTrace& trace,
                      const std::vector<float>& dyaw, const std::vector<float>& dp);

float sigmoid(float z);

} // namespace dronet::nn
