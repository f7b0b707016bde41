#pragma once

#include <map>
#include <string>
#include <vector>

#include "lumen/emulator.hpp"
#include "lumen/ffnn.hpp"
#include "lumen/io.hpp"
#include "lumen/transport.hpp"
#include "lumen/types.hpp"

namespace lumen {

/// Gated recurrent sequence emulator: scalar parameters enter only through
/// the initial hidden state (affine encoder); an autonomous update/reset
/// gated cell unrolls T steps; an affine readout with softplus emits one
/// non-negative sample per step. Signals are trained against a per-dataset
/// max normalization and emitted in physical units.
struct SeqModel {
    Matrix w_enc;  // H x d
    Vector b_enc;  // H
    Matrix u_z, u_r, u_h;  // H x H recurrent weights per gate
    Vector b_z, b_r, b_h;  // H
    Vector w_out;  // H
    double b_out = 0.0;
    Index steps = 0;        // T, emitted samples
    double dt_signal = 0.1;  // s between samples (times start at 0)

    Vector in_mean, in_std;      // input standardization
    double signal_scale = 1.0;   // per-dataset max normalization
    Vector in_low, in_high;      // training ranges (extrapolation warning)
    std::vector<std::string> input_names;

    Index input_dim() const { return w_enc.cols(); }
    Index hidden_dim() const { return w_enc.rows(); }
};

/// Fresh model with uniform fan-in initialization; the update-gate bias
/// starts at -1 so early training favors slowly evolving state.
SeqModel seq_init(Index input_dim, Index hidden, Index steps, std::uint64_t seed = 1);

/// Unrolls the model for each parameter row; returns scaled-space
/// emissions, one row per sample, steps columns.
Matrix seq_forward(const SeqModel& model, const Matrix& x_scaled);

/// Physical-unit signal for one parameter vector; warns on inputs outside
/// the training ranges.
ConcentrationSignal seq_predict(const SeqModel& model, const Vector& params);

struct SeqTrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Index batch_size = 64;
    Index max_epochs = 2000;
    Index patience = 50;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Gradients of the mean squared scaled-space error via full
/// backpropagation through time, layout mirroring SeqModel.
struct SeqGradients {
    Matrix w_enc;
    Vector b_enc;
    Matrix u_z, u_r, u_h;
    Vector b_z, b_r, b_h;
    Vector w_out;
    double b_out = 0.0;
};

/// mse_out, when given, receives the batch loss from the same forward pass.
SeqGradients seq_grad(const SeqModel& model, const Matrix& x_scaled, const Matrix& y_scaled,
                      double* mse_out = nullptr);

/// Mean squared error over all samples and steps in scaled space.
double seq_mse(const SeqModel& model, const Matrix& x_scaled, const Matrix& y_scaled);

/// Adam with early stopping on a validation split (best-epoch snapshot
/// restored), as in the feedforward trainer. X in physical units, Y one
/// signal per row; the model's scalers are fit here. Throws Error on
/// non-finite loss.
TrainHistory seq_train(SeqModel& model, const Matrix& X, const Matrix& Y,
                       const SeqTrainConfig& config);

/// Mean relative L2 error sqrt(sum ||err||^2 / sum ||truth||^2) in
/// physical units, the sequence-emulator test metric.
double seq_rel_l2(const SeqModel& model, const Matrix& X, const Matrix& Y);

/// Emulator adapter: outputs are the signal samples c_0 .. c_{T-1}.
class SeqEmulator : public Emulator {
  public:
    SeqEmulator(SeqModel model, std::vector<std::string> input_names);

    std::string kind() const override { return "gru"; }
    Matrix predict(const Matrix& x) const override;
    void save(const std::string& path) const override;
    static SeqEmulator from_model_file(const ModelFile& file);

    const SeqModel& model() const { return model_; }
    std::map<std::string, std::string> meta;

  private:
    SeqModel model_;
};

}  // namespace lumen
