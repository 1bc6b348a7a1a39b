#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "crykit/dsp.hpp"
#include "crykit/tensor.hpp"

namespace crykit {

enum class Padding { same, valid };

struct LayerSpec {
    enum class Kind { conv, maxpool, relu, flatten, dense, softmax };
    Kind kind = Kind::relu;
    // conv
    int filters = 0;
    int kernel = 0;  // odd
    Padding padding = Padding::valid;
    // maxpool
    int pool_size = 2;
    int pool_stride = 2;
    // dense
    int units = 0;

    static LayerSpec conv(int filters, int kernel, Padding padding);
    static LayerSpec maxpool(int size = 2, int stride = 2);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec dense(int units);
    static LayerSpec softmax();
};

// The classifier stack this toolkit is built around: three 5x5 conv
// layers (20/32/20 filters, same/valid/valid padding) each followed by
// ReLU and 2x2 max-pooling, flattened to 500, a 256-unit ReLU dense
// layer, and a softmax output. On 64x64x1 input the shapes run
// 64x64x20 -> 32x32x20 -> 28x28x32 -> 14x14x32 -> 10x10x20 -> 5x5x20.
std::vector<LayerSpec> paper_architecture(int n_classes = 2);

struct Model {
    std::vector<LayerSpec> layers;
    // Indexed per layer; parameterless layers hold empty tensors.
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    std::vector<std::vector<int>> output_shapes;
    std::vector<int> input_shape;
    std::uint64_t rng_seed = 0;

    // Builds the stack, validates the shape chain, and applies He-normal
    // initialization (zero biases).
    static Model build(std::vector<LayerSpec> layers,
                       std::vector<int> input_shape, std::uint64_t seed);

    int n_classes() const;
    std::size_t param_count() const;
};

// --- layer primitives (exposed so gradients can be checked in isolation) ---

// input [H x W x C], weights [K x K x C x F], bias [F]. Cross-correlation
// convention; "same" zero-pads by (K-1)/2.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                      const Tensor& bias, Padding padding);

struct Conv2dGrads {
    Tensor input, weights, bias;
};
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights, Padding padding);

Tensor maxpool_forward(const Tensor& input, int size = 2, int stride = 2);
// Routes each gradient to its window argmax; ties go to the first
// element in row-major window order.
Tensor maxpool_backward(const Tensor& grad_out, const Tensor& input,
                        int size = 2, int stride = 2);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

// weights [units x inputs], input and bias 1-D.
Tensor dense_forward(const Tensor& input, const Tensor& weights,
                     const Tensor& bias);
struct DenseGrads {
    Tensor input, weights, bias;
};
DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& weights);

// Max-subtracted softmax; stable for arbitrary finite logits.
std::vector<double> softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> probs, int label);

// --- optimizer ---

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m, v;
    long long t = 0;

    static AdamState init(const std::vector<Tensor*>& params);
};

// Standard Adam with bias correction, applied in place.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamConfig& config);

// --- training / evaluation ---

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    AdamConfig adam;
    std::uint64_t seed = 0;
    // Convergence stop for desk-scale runs: finish once training accuracy
    // has held at/above early_stop_accuracy for this many consecutive
    // epochs. 0 keeps the full epoch count.
    int early_stop_patience = 0;
    double early_stop_accuracy = 0.998;
};

struct LabeledImage {
    SpectrogramImage image;
    int label = 0;
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Mini-batch training with a seeded shuffle per epoch. Requires at least
// one sample of every class (EmptyClass otherwise). Returns per-epoch
// loss/accuracy, one entry per epoch actually run.
std::vector<EpochStats> train(Model& model,
                              std::span<const LabeledImage> data,
                              const TrainConfig& config);

// Whole-model backward pass for one sample: cross-entropy loss plus the
// exact gradients of every parameter (and the input). Exposed so tests
// can check the analytic gradients against finite differences.
struct ModelGrads {
    std::vector<Tensor> weights, biases;  // indexed per layer
    Tensor input;
    double loss = 0.0;
    int predicted = 0;
};
ModelGrads model_gradients(const Model& model, const Tensor& input, int label);
double model_loss(const Model& model, const Tensor& input, int label);

std::vector<double> model_forward(const Model& model,
                                  const SpectrogramImage& image);
// Argmax class (ties resolve to the lowest index). probs, when given,
// receives the softmax output.
int predict(const Model& model, const SpectrogramImage& image,
            std::vector<double>* probs = nullptr);
double evaluate(const Model& model, std::span<const LabeledImage> data);

// Versioned binary checkpoint with an integrity checksum.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

}  // namespace crykit
