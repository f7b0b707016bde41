#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lumen/emulator.hpp"
#include "lumen/io.hpp"
#include "lumen/types.hpp"

namespace lumen {

enum class Activation { Relu, Identity };

struct Layer {
    Matrix W;  // fan_out x fan_in
    Vector b;  // fan_out
    Activation activation = Activation::Relu;
};

/// Plain feed-forward network operating in scaled space. The final layer is
/// always Identity, hidden layers ReLU.
struct Network {
    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }
    Index parameter_count() const;
};

/// He-uniform weights (U(-sqrt(6/fan_in), +sqrt(6/fan_in))), zero biases;
/// hidden=[] yields a single linear layer. Deterministic under seed.
Network ffnn_init(int d, int m, const std::vector<int>& hidden = {64, 32, 32},
                  std::uint64_t seed = 1);

/// Batch forward pass, one sample per row (n x d -> n x m).
Matrix ffnn_forward(const Network& net, const Matrix& x);
Vector ffnn_forward(const Network& net, const Vector& x);

struct FfnnTrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 64;
    int max_epochs = 5000;
    int patience = 100;              // non-improving epochs tolerated before stopping
    double validation_fraction = 0.1;  // of the training split; 0 disables early stopping data
    std::uint64_t seed = 1;

    void validate() const;  // throws Error on non-positive values or patience >= max_epochs
};

struct TrainHistory {
    std::vector<double> train_loss;  // one entry per epoch actually run
    std::vector<double> val_loss;
    int best_epoch = 0;  // index into the histories
};

/// Adam on mean squared error with early stopping; restores the weights of
/// the best validation epoch. X and Y are scaled, one sample per row.
/// Bit-reproducible under a fixed seed and config.
TrainHistory ffnn_train(Network& net, const Matrix& X, const Matrix& Y,
                        const FfnnTrainConfig& config);

struct FfnnGradients {
    std::vector<Matrix> dW;
    std::vector<Vector> db;
};

/// Gradient of the batch MSE (mean over samples and outputs) with respect
/// to every weight and bias.
FfnnGradients ffnn_grad_weights(const Network& net, const Matrix& X, const Matrix& Y);

/// Jacobian dy/dx (m x d) at a single scaled input.
Matrix ffnn_grad_input(const Network& net, const Vector& x);

double ffnn_mse(const Network& net, const Matrix& X, const Matrix& Y);

/// FFNN behind the common emulator contract: scales inputs, unscales
/// outputs, and maps the scaled-space Jacobian to physical units.
class FfnnEmulator : public Emulator {
  public:
    FfnnEmulator(Network net, Scaler scaler, std::vector<std::string> input_names,
                 std::vector<std::string> output_names);

    std::string kind() const override { return "ffnn"; }
    Matrix predict(const Matrix& x) const override;
    bool has_input_gradient() const override { return true; }
    Matrix input_jacobian(const Vector& x) const override;
    void save(const std::string& path) const override;
    static FfnnEmulator from_model_file(const ModelFile& file);

    const Network& network() const { return net_; }
    const Scaler& scaler() const { return scaler_; }
    std::map<std::string, std::string> meta;  // config hash, seed, training record

  private:
    Network net_;
    Scaler scaler_;
};

}  // namespace lumen
