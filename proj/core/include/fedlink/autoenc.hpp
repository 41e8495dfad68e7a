#pragma once

#include <string>
#include <vector>

#include "fedlink/datastore.hpp"

namespace fedlink {

enum class Activation { sigmoid, relu };

/// MLP autoencoder with symmetric layer dims [d, h1, .., z, .., h1, d],
/// hidden activations and a linear output. All weights and biases live in
/// one flat parameter vector so aggregation is plain vector arithmetic.
///
/// Flat layout, per weight layer l: W_l column-major (out x in), then b_l.
struct Model {
    std::vector<int> layer_dims;
    std::vector<Activation> hidden_acts;  // one per hidden layer
    Vector params;

    int n_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
    int input_dim() const { return layer_dims.front(); }
    int bottleneck_dim() const { return layer_dims[layer_dims.size() / 2]; }
    long n_params() const { return params.size(); }
};

long param_count(const std::vector<int>& layer_dims);

Model init_model(const std::vector<int>& layer_dims, Activation activation, uint64_t seed);
Model init_model(const std::vector<int>& layer_dims, const std::vector<Activation>& hidden_acts,
                 uint64_t seed);

struct ForwardResult {
    Matrix reconstruction;  // b x d
    Matrix embedding;       // b x z, bottleneck activation
};

ForwardResult forward(const Model& m, const Matrix& batch);

/// Sum over points of the per-point feature-mean squared error.
double mse_loss(const Matrix& reconstruction, const Matrix& input);

/// Exact gradient of mse_loss(forward(m, batch), batch) / batch_size.
Vector backward(const Model& m, const Matrix& batch);

Model sgd_step(const Model& m, const Matrix& batch, double eta);

/// FedProx local step: adds mu * (params - global_params) to the gradient.
Model prox_sgd_step(const Model& m, const Matrix& batch, double eta, double mu,
                    const Vector& global_params);

/// Linear classifier trained on frozen embeddings (softmax cross-entropy,
/// full-batch gradient descent). Evaluation only.
struct ProbeHead {
    Matrix weights;  // n_classes x z
    Vector bias;     // n_classes
};

ProbeHead probe_train(const Matrix& embeddings, const std::vector<int>& labels, int n_classes,
                      int iters, double eta, uint64_t seed);
double probe_eval(const ProbeHead& head, const Matrix& embeddings, const std::vector<int>& labels);

/// Checkpoint: magic "FLAE", u32 version, u32 n_dims, u32 dims[], u32 n_acts,
/// u8 act tags, u64 n_params, f64 params, all little-endian.
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

}  // namespace fedlink
