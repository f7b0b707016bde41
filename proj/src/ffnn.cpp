#include "lumen/ffnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lumen/rng.hpp"

namespace lumen {

Index Network::parameter_count() const {
    Index count = 0;
    for (const auto& layer : layers) count += layer.W.size() + layer.b.size();
    return count;
}

Network ffnn_init(int d, int m, const std::vector<int>& hidden, std::uint64_t seed) {
    if (d < 1 || m < 1) throw Error("ffnn_init needs d, m >= 1");
    for (int width : hidden)
        if (width < 1) throw Error("ffnn_init: hidden layer width must be >= 1");
    Rng rng(seed);
    Network net;
    std::vector<int> dims;
    dims.push_back(d);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(m);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer layer;
        const int fan_in = dims[i];
        const int fan_out = dims[i + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        layer.W.resize(fan_out, fan_in);
        for (Index r = 0; r < layer.W.rows(); ++r)
            for (Index c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = rng.uniform(-limit, limit);
        layer.b = Vector::Zero(fan_out);
        layer.activation =
            (i + 2 == dims.size()) ? Activation::Identity : Activation::Relu;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace {

Matrix layer_forward(const Layer& layer, const Matrix& a) {
    Matrix z = (a * layer.W.transpose()).rowwise() + layer.b.transpose();
    if (layer.activation == Activation::Relu) z = z.cwiseMax(0.0);
    return z;
}

}  // namespace

Matrix ffnn_forward(const Network& net, const Matrix& x) {
    if (net.layers.empty()) throw Error("ffnn_forward on an empty network");
    if (x.cols() != net.input_dim())
        throw Error("ffnn_forward: input has " + std::to_string(x.cols()) +
                    " columns, network expects " + std::to_string(net.input_dim()));
    Matrix a = x;
    for (const auto& layer : net.layers) a = layer_forward(layer, a);
    return a;
}

Vector ffnn_forward(const Network& net, const Vector& x) {
    return ffnn_forward(net, Matrix(x.transpose())).row(0).transpose();
}

double ffnn_mse(const Network& net, const Matrix& X, const Matrix& Y) {
    const Matrix diff = ffnn_forward(net, X) - Y;
    return diff.array().square().sum() / static_cast<double>(diff.size());
}

namespace {

/// Forward pass keeping post-activation values per layer (activations[0] is
/// the input batch), then reverse-mode accumulation of the MSE gradient.
FfnnGradients backprop(const Network& net, const Matrix& X, const Matrix& Y) {
    const std::size_t L = net.layers.size();
    std::vector<Matrix> act(L + 1);
    act[0] = X;
    for (std::size_t i = 0; i < L; ++i) act[i + 1] = layer_forward(net.layers[i], act[i]);

    FfnnGradients grads;
    grads.dW.resize(L);
    grads.db.resize(L);
    const double scale = 2.0 / static_cast<double>(Y.size());
    Matrix delta = scale * (act[L] - Y);  // d loss / d z_L (identity output layer)
    for (std::size_t i = L; i-- > 0;) {
        grads.dW[i] = delta.transpose() * act[i];
        grads.db[i] = delta.colwise().sum().transpose();
        if (i == 0) break;
        delta = delta * net.layers[i].W;
        if (net.layers[i - 1].activation == Activation::Relu)
            delta = delta.cwiseProduct((act[i].array() > 0.0).cast<double>().matrix());
    }
    return grads;
}

}  // namespace

FfnnGradients ffnn_grad_weights(const Network& net, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows()) throw Error("ffnn_grad_weights: X and Y row counts differ");
    if (X.rows() == 0) throw Error("ffnn_grad_weights: empty batch");
    return backprop(net, X, Y);
}

Matrix ffnn_grad_input(const Network& net, const Vector& x) {
    if (net.layers.empty()) throw Error("ffnn_grad_input on an empty network");
    std::vector<Vector> act(net.layers.size() + 1);
    act[0] = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Vector z = net.layers[i].W * act[i] + net.layers[i].b;
        if (net.layers[i].activation == Activation::Relu) z = z.cwiseMax(0.0);
        act[i + 1] = z;
    }
    Matrix jac = net.layers.back().W;
    for (std::size_t i = net.layers.size() - 1; i-- > 0;) {
        Matrix scaled = net.layers[i].W;
        if (net.layers[i].activation == Activation::Relu)
            for (Index r = 0; r < scaled.rows(); ++r)
                if (act[i + 1][r] <= 0.0) scaled.row(r).setZero();
        jac = jac * scaled;
    }
    return jac;
}

void FfnnTrainConfig::validate() const {
    if (learning_rate <= 0 || beta1 <= 0 || beta2 <= 0 || eps <= 0)
        throw Error("ffnn train config: rates and epsilons must be positive");
    if (beta1 >= 1 || beta2 >= 1) throw Error("ffnn train config: betas must lie in (0, 1)");
    if (batch_size < 1 || max_epochs < 1) throw Error("ffnn train config: sizes must be >= 1");
    if (patience < 0 || patience >= max_epochs)
        throw Error("ffnn train config: need 0 <= patience < max_epochs");
    if (validation_fraction < 0 || validation_fraction >= 1)
        throw Error("ffnn train config: validation_fraction must lie in [0, 1)");
}

namespace {

struct AdamState {
    std::vector<Matrix> mW, vW;
    std::vector<Vector> mb, vb;
    long long t = 0;

    explicit AdamState(const Network& net) {
        for (const auto& layer : net.layers) {
            mW.push_back(Matrix::Zero(layer.W.rows(), layer.W.cols()));
            vW.push_back(Matrix::Zero(layer.W.rows(), layer.W.cols()));
            mb.push_back(Vector::Zero(layer.b.size()));
            vb.push_back(Vector::Zero(layer.b.size()));
        }
    }

    void step(Network& net, const FfnnGradients& grads, const FfnnTrainConfig& cfg) {
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            mW[i] = cfg.beta1 * mW[i] + (1.0 - cfg.beta1) * grads.dW[i];
            vW[i] = cfg.beta2 * vW[i] + (1.0 - cfg.beta2) * grads.dW[i].cwiseAbs2();
            net.layers[i].W -=
                (cfg.learning_rate * (mW[i] / bc1).array() / ((vW[i] / bc2).cwiseSqrt().array() + cfg.eps))
                    .matrix();
            mb[i] = cfg.beta1 * mb[i] + (1.0 - cfg.beta1) * grads.db[i];
            vb[i] = cfg.beta2 * vb[i] + (1.0 - cfg.beta2) * grads.db[i].cwiseAbs2();
            net.layers[i].b -=
                (cfg.learning_rate * (mb[i] / bc1).array() / ((vb[i] / bc2).cwiseSqrt().array() + cfg.eps))
                    .matrix();
        }
    }
};

}  // namespace

TrainHistory ffnn_train(Network& net, const Matrix& X, const Matrix& Y,
                        const FfnnTrainConfig& config) {
    config.validate();
    if (X.rows() == 0) throw Error("ffnn_train: empty training set");
    if (X.rows() != Y.rows()) throw Error("ffnn_train: X and Y row counts differ");
    if (X.cols() != net.input_dim() || Y.cols() != net.output_dim())
        throw Error("ffnn_train: data dimensions do not match the network");

    const Index n = X.rows();
    Index n_val = static_cast<Index>(std::llround(static_cast<double>(n) * config.validation_fraction));
    if (n_val >= n) n_val = n - 1;
    const auto order = shuffled_indices(static_cast<std::size_t>(n), config.seed);
    Matrix Xt(n - n_val, X.cols()), Yt(n - n_val, Y.cols());
    Matrix Xv(n_val, X.cols()), Yv(n_val, Y.cols());
    for (Index i = 0; i < n_val; ++i) {
        Xv.row(i) = X.row(static_cast<Index>(order[static_cast<std::size_t>(i)]));
        Yv.row(i) = Y.row(static_cast<Index>(order[static_cast<std::size_t>(i)]));
    }
    for (Index i = n_val; i < n; ++i) {
        Xt.row(i - n_val) = X.row(static_cast<Index>(order[static_cast<std::size_t>(i)]));
        Yt.row(i - n_val) = Y.row(static_cast<Index>(order[static_cast<std::size_t>(i)]));
    }

    AdamState adam(net);
    Rng rng(config.seed ^ 0x9E3779B97F4A7C15ull);
    TrainHistory history;
    double best_val = std::numeric_limits<double>::infinity();
    Network best_net = net;
    int bad_epochs = 0;

    std::vector<std::size_t> idx(static_cast<std::size_t>(Xt.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), idx.size() - start);
            Matrix xb(static_cast<Index>(count), Xt.cols());
            Matrix yb(static_cast<Index>(count), Yt.cols());
            for (std::size_t k = 0; k < count; ++k) {
                xb.row(static_cast<Index>(k)) = Xt.row(static_cast<Index>(idx[start + k]));
                yb.row(static_cast<Index>(k)) = Yt.row(static_cast<Index>(idx[start + k]));
            }
            adam.step(net, backprop(net, xb, yb), config);
        }

        const double train_loss = ffnn_mse(net, Xt, Yt);
        const double val_loss = n_val > 0 ? ffnn_mse(net, Xv, Yv) : train_loss;
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw Error("ffnn_train: non-finite loss at epoch " + std::to_string(epoch));
        history.train_loss.push_back(train_loss);
        history.val_loss.push_back(val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_net = net;
            history.best_epoch = epoch;
            bad_epochs = 0;
        } else if (++bad_epochs > config.patience) {
            break;
        }
    }
    net = best_net;
    return history;
}

FfnnEmulator::FfnnEmulator(Network net, Scaler scaler, std::vector<std::string> input_names,
                           std::vector<std::string> output_names)
    : net_(std::move(net)), scaler_(std::move(scaler)) {
    input_names_ = std::move(input_names);
    output_names_ = std::move(output_names);
    if (static_cast<int>(input_names_.size()) != net_.input_dim() ||
        static_cast<int>(output_names_.size()) != net_.output_dim())
        throw Error("ffnn emulator: name lists do not match network dimensions");
}

Matrix FfnnEmulator::predict(const Matrix& x) const {
    return scaler_.unscale_outputs(ffnn_forward(net_, scaler_.scale_inputs(x)));
}

Matrix FfnnEmulator::input_jacobian(const Vector& x) const {
    const Vector xs = scaler_.scale_inputs(Matrix(x.transpose())).row(0).transpose();
    Matrix jac = ffnn_grad_input(net_, xs);
    for (Index r = 0; r < jac.rows(); ++r)
        for (Index c = 0; c < jac.cols(); ++c)
            jac(r, c) *= scaler_.out_std[r] / scaler_.in_std[c];
    return jac;
}

void FfnnEmulator::save(const std::string& path) const {
    ModelFile file;
    file.kind = "ffnn";
    file.add("inputs", input_names_);
    file.add("outputs", output_names_);
    std::vector<std::string> dims;
    dims.push_back(std::to_string(net_.input_dim()));
    for (const auto& layer : net_.layers) dims.push_back(std::to_string(layer.W.rows()));
    file.add("dims", dims);
    for (std::size_t i = 0; i < net_.layers.size(); ++i) {
        const std::string tag = std::to_string(i);
        for (Index r = 0; r < net_.layers[i].W.rows(); ++r)
            file.add_matrix_row("W" + tag, net_.layers[i].W.row(r).transpose());
        file.add_vector("b" + tag, net_.layers[i].b);
    }
    file.add_vector("in_mean", scaler_.in_mean);
    file.add_vector("in_std", scaler_.in_std);
    file.add_vector("out_mean", scaler_.out_mean);
    file.add_vector("out_std", scaler_.out_std);
    for (const auto& [key, value] : meta) file.add_string("meta:" + key, value);
    file.save(path);
}

FfnnEmulator FfnnEmulator::from_model_file(const ModelFile& file) {
    if (file.kind != "ffnn") throw IoError("model file is '" + file.kind + "', expected ffnn");
    const auto dims_raw = file.get("dims");
    std::vector<int> dims;
    for (const auto& s : dims_raw) dims.push_back(static_cast<int>(parse_int(s)));
    if (dims.size() < 2) throw IoError("ffnn model: dims record too short");
    Network net;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer layer;
        const std::string tag = std::to_string(i);
        layer.W = file.get_matrix("W" + tag);
        layer.b = file.get_vector("b" + tag);
        if (layer.W.rows() != dims[i + 1] || layer.W.cols() != dims[i] ||
            layer.b.size() != dims[i + 1])
            throw IoError("ffnn model: layer " + tag + " dimensions inconsistent with dims");
        layer.activation = (i + 2 == dims.size()) ? Activation::Identity : Activation::Relu;
        net.layers.push_back(std::move(layer));
    }
    Scaler scaler;
    scaler.in_mean = file.get_vector("in_mean");
    scaler.in_std = file.get_vector("in_std");
    scaler.out_mean = file.get_vector("out_mean");
    scaler.out_std = file.get_vector("out_std");
    FfnnEmulator emulator(std::move(net), std::move(scaler), file.get("inputs"),
                          file.get("outputs"));
    for (const auto& [key, values] : file.records)
        if (key.rfind("meta:", 0) == 0 && !values.empty())
            emulator.meta[key.substr(5)] = values.front();
    return emulator;
}

}  // namespace lumen
