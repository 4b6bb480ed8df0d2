#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gridforge/tensor.hpp"

namespace gridforge::nn {

enum class Act { sigmoid, tanh, relu };
enum class Pad { valid, same };
enum class PoolKind { max, avg };
enum class LossKind { sse, cross_entropy };

struct Conv1DSpec {
    std::size_t filters = 1;
    std::size_t width = 1;
    Pad pad = Pad::valid;
};

struct Conv2DSpec {
    std::size_t filters = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    Pad pad = Pad::valid;
};

struct ActSpec {
    Act kind = Act::relu;
};

// window holds one extent for 1D pooling, two (rows, cols) for 2D.
struct PoolSpec {
    PoolKind kind = PoolKind::max;
    std::vector<std::size_t> window{2};
};

struct FlattenSpec {};

struct DenseSpec {
    std::size_t units = 1;
};

struct DropoutSpec {
    double rate = 0.0;
};

struct SoftmaxSpec {};

using LayerSpec = std::variant<Conv1DSpec, Conv2DSpec, ActSpec, PoolSpec, FlattenSpec,
                               DenseSpec, DropoutSpec, SoftmaxSpec>;

/// Declarative architecture: layer list plus input shape and loss. Shapes
/// are propagated and validated by validate(); no computation happens until
/// forward().
struct NetworkSpec {
    Shape input_shape;
    LossKind loss = LossKind::sse;
    std::vector<LayerSpec> layers;
};

/// Output shape of every layer in order, starting after the input. Throws
/// ShapeError / SpecError when the stack is inconsistent (e.g. dense on a
/// grid, cross-entropy without a terminal softmax).
std::vector<Shape> propagate_shapes(const NetworkSpec& spec);

/// Per-layer parameters, index-aligned with NetworkSpec::layers; layers
/// without parameters have empty tensors. Conv2D weights are
/// (filters, kh, kw, in_c); Conv1D (filters, kw, in_c); Dense (units, in).
struct LayerParams {
    Tensor weights;
    Tensor bias;
};

struct Params {
    std::vector<LayerParams> layers;
    std::uint64_t seed = 0;
};

/// Seeded Glorot-style init: uniform in +-sqrt(6/(fan_in+fan_out)), zero bias.
Params init_params(const NetworkSpec& spec, std::uint64_t seed);

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 1;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
};

/// Cached intermediate state of one forward pass, consumed by backward().
struct ForwardTrace {
    std::vector<Tensor> outputs;       // one per layer
    std::vector<Tensor> dropout_masks; // aligned; empty unless dropout in training mode
    bool training = false;
};

/// Forward pass. In training mode dropout masks are generated from
/// `dropout_seed`; at inference dropout is the identity.
Tensor forward(const NetworkSpec& spec, const Params& params, const Tensor& input,
               ForwardTrace* trace = nullptr, bool training = false,
               std::uint64_t dropout_seed = 0);

double loss_value(const Tensor& pred, const Tensor& target, LossKind kind);

struct BackwardResult {
    Params grads;   // same structure as Params
    double loss = 0.0;
    Tensor prediction;
};

/// Exact reverse-mode gradient of the loss at (input, target) with respect
/// to every parameter. ReLU uses subgradient 0 at 0; max-pool routes to the
/// first row-major maximizer on ties. Throws NumericError (with the layer
/// index) on non-finite intermediates.
BackwardResult backward(const NetworkSpec& spec, const Params& params,
                        const Tensor& input, const Tensor& target,
                        bool training = false, std::uint64_t dropout_seed = 0);

using Dataset = std::vector<std::pair<Tensor, Tensor>>; // (input, target)

struct TrainResult {
    Params params;
    std::vector<double> epoch_loss; // mean per-sample loss seen during each epoch
};

/// Minibatch SGD with a seeded shuffle each epoch; deterministic for a
/// fixed config. Throws TrainingError naming epoch/batch if the loss goes
/// non-finite.
TrainResult train(const NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg);

Tensor predict(const NetworkSpec& spec, const Params& params, const Tensor& input);

struct Metrics {
    bool classification = false;
    double accuracy = 0.0;
    double rmse = 0.0;
    double mean_loss = 0.0;
    // confusion[predicted][true_class], columns are the true classes
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<double> per_class_accuracy;
};

Metrics evaluate(const NetworkSpec& spec, const Params& params, const Dataset& data);

// JSON (de)serialization. NetworkSpec uses the documented schema
// {"input_shape": [...], "loss": "sse", "layers": [{"type": "conv2d", ...}]};
// Params nest weights as shape-structured arrays and round-trip exactly.
std::string network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const std::string& text);
std::string params_to_json(const Params& params);
Params params_from_json(const std::string& text, const NetworkSpec& spec);

} // namespace gridforge::nn
