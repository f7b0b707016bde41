#include "lumen/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "lumen/rng.hpp"

namespace lumen {

namespace {

Matrix softplus(const Matrix& a) {
    // log(1 + e^a) = max(a, 0) + log1p(e^{-|a|}), stable for large |a|.
    return (a.array().max(0.0) + (-a.array().abs()).exp().log1p()).matrix();
}

void fill_uniform(Matrix& w, double limit, Rng& rng) {
    for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
}

/// Preallocated unroll workspace; the per-step buffers are written in
/// place so the hot loop performs no allocation.
struct Activations {
    std::vector<Matrix> h;              // steps + 1 entries, batch x H
    std::vector<Matrix> z, r, htilde;   // steps entries (training only)
    Matrix a_out;                       // batch x steps, readout pre-activation
    Matrix y;                           // batch x steps, softplus emissions
};

Activations unroll(const SeqModel& model, const Matrix& x_scaled, bool keep_gates) {
    const Index batch = x_scaled.rows();
    const Index hidden = model.hidden_dim();
    const auto steps = static_cast<std::size_t>(model.steps);
    Activations act;
    act.a_out.resize(batch, model.steps);
    act.h.resize(keep_gates ? steps + 1 : 1);
    if (keep_gates) {
        act.z.resize(steps);
        act.r.resize(steps);
        act.htilde.resize(steps);
    }

    Matrix h(batch, hidden), z(batch, hidden), r(batch, hidden), htilde(batch, hidden);
    Matrix pre(batch, hidden), rh(batch, hidden);
    h.noalias() = x_scaled * model.w_enc.transpose();
    h.rowwise() += model.b_enc.transpose();
    act.h[0] = h;
    for (Index t = 0; t < model.steps; ++t) {
        pre.noalias() = h * model.u_z.transpose();
        pre.rowwise() += model.b_z.transpose();
        z.array() = 1.0 / (1.0 + (-pre.array()).exp());
        pre.noalias() = h * model.u_r.transpose();
        pre.rowwise() += model.b_r.transpose();
        r.array() = 1.0 / (1.0 + (-pre.array()).exp());
        rh.array() = r.array() * h.array();
        pre.noalias() = rh * model.u_h.transpose();
        pre.rowwise() += model.b_h.transpose();
        htilde.array() = pre.array().tanh();
        h.array() += z.array() * (htilde.array() - h.array());
        act.a_out.col(t).noalias() = h * model.w_out;
        act.a_out.col(t).array() += model.b_out;
        if (keep_gates) {
            const auto ut = static_cast<std::size_t>(t);
            act.h[ut + 1] = h;
            act.z[ut] = z;
            act.r[ut] = r;
            act.htilde[ut] = htilde;
        }
    }
    act.y = softplus(act.a_out);
    return act;
}

}  // namespace

SeqModel seq_init(Index input_dim, Index hidden, Index steps, std::uint64_t seed) {
    if (input_dim < 1 || hidden < 1 || steps < 1)
        throw Error("seq_init needs positive input, hidden, and step counts");
    Rng rng(seed);
    SeqModel model;
    const double enc_limit = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double rec_limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    model.w_enc.resize(hidden, input_dim);
    fill_uniform(model.w_enc, enc_limit, rng);
    model.b_enc = Vector::Zero(hidden);
    for (Matrix* u : {&model.u_z, &model.u_r, &model.u_h}) {
        u->resize(hidden, hidden);
        fill_uniform(*u, rec_limit, rng);
    }
    // Update-gate biases span log-spaced time constants from one step up to
    // min(steps/2, 300) steps, so the unit pool covers every dynamical scale
    // the rollout can express. A uniform bias makes all units forget the
    // encoded parameters at the same rate, which stalls training on long
    // horizons.
    const double t_max = std::max(2.0, std::min(static_cast<double>(steps) / 2.0, 300.0));
    model.b_z.resize(hidden);
    for (Index i = 0; i < hidden; ++i) {
        const double frac =
            hidden == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(hidden - 1);
        model.b_z[i] = -frac * std::log(t_max);
    }
    model.b_r = Vector::Zero(hidden);
    model.b_h = Vector::Zero(hidden);
    model.w_out.resize(hidden);
    for (Index i = 0; i < hidden; ++i) model.w_out[i] = rng.uniform(-rec_limit, rec_limit);
    model.b_out = -1.0;
    model.steps = steps;
    model.in_mean = Vector::Zero(input_dim);
    model.in_std = Vector::Ones(input_dim);
    model.in_low = Vector::Constant(input_dim, -std::numeric_limits<double>::infinity());
    model.in_high = Vector::Constant(input_dim, std::numeric_limits<double>::infinity());
    return model;
}

Matrix seq_forward(const SeqModel& model, const Matrix& x_scaled) {
    if (x_scaled.cols() != model.input_dim())
        throw Error("seq_forward: input has " + std::to_string(x_scaled.cols()) +
                    " columns, model expects " + std::to_string(model.input_dim()));
    return unroll(model, x_scaled, false).y;
}

ConcentrationSignal seq_predict(const SeqModel& model, const Vector& params) {
    if (params.size() != model.input_dim())
        throw Error("seq_predict: parameter vector has " + std::to_string(params.size()) +
                    " entries, model expects " + std::to_string(model.input_dim()));
    for (Index j = 0; j < params.size(); ++j) {
        const double span = model.in_high[j] - model.in_low[j];
        const double tol = 1e-9 * (1.0 + std::abs(span));
        if (params[j] < model.in_low[j] - tol || params[j] > model.in_high[j] + tol) {
            std::cerr << "warning: input " << j
                      << " outside the training range; extrapolating\n";
            break;
        }
    }
    Matrix x(1, params.size());
    x.row(0) = ((params - model.in_mean).array() / model.in_std.array()).transpose();
    const Matrix y = seq_forward(model, x);
    ConcentrationSignal signal;
    signal.times = Vector::LinSpaced(model.steps, 0.0,
                                     model.dt_signal * static_cast<double>(model.steps - 1));
    signal.values = y.row(0).transpose() * model.signal_scale;
    return signal;
}

void SeqTrainConfig::validate() const {
    if (learning_rate <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 ||
        eps <= 0)
        throw Error("seq_train: invalid Adam configuration");
    if (batch_size < 1 || max_epochs < 1 || patience < 0)
        throw Error("seq_train: batch_size, max_epochs must be >= 1 and patience >= 0");
    if (validation_fraction < 0 || validation_fraction >= 1)
        throw Error("seq_train: validation_fraction must lie in [0, 1)");
}

SeqGradients seq_grad(const SeqModel& model, const Matrix& x_scaled, const Matrix& y_scaled,
                      double* mse_out) {
    if (x_scaled.rows() != y_scaled.rows())
        throw Error("seq_grad: X and Y row counts differ");
    if (y_scaled.cols() != model.steps)
        throw Error("seq_grad: Y has " + std::to_string(y_scaled.cols()) +
                    " columns, model emits " + std::to_string(model.steps));
    const Index batch = x_scaled.rows();
    const Index hidden = model.hidden_dim();
    const Activations act = unroll(model, x_scaled, true);
    if (mse_out)
        *mse_out = (act.y - y_scaled).squaredNorm() /
                   static_cast<double>(batch * model.steps);

    SeqGradients g;
    g.w_enc = Matrix::Zero(hidden, model.input_dim());
    g.b_enc = Vector::Zero(hidden);
    for (Matrix* u : {&g.u_z, &g.u_r, &g.u_h}) *u = Matrix::Zero(hidden, hidden);
    for (Vector* b : {&g.b_z, &g.b_r, &g.b_h}) *b = Vector::Zero(hidden);
    g.w_out = Vector::Zero(hidden);

    const double norm = 2.0 / static_cast<double>(batch * model.steps);
    Matrix dh = Matrix::Zero(batch, hidden);
    Matrix dz(batch, hidden), dgate(batch, hidden), dh_prev(batch, hidden);
    Matrix rh(batch, hidden), dq(batch, hidden), dr(batch, hidden);
    Vector da(batch);
    for (Index t = model.steps - 1; t >= 0; --t) {
        const auto ut = static_cast<std::size_t>(t);
        const Matrix& h_prev = act.h[ut];
        const Matrix& h_now = act.h[ut + 1];
        const Matrix& z = act.z[ut];
        const Matrix& r = act.r[ut];
        const Matrix& htilde = act.htilde[ut];

        // Emission: y = softplus(a), dy/da = sigmoid(a).
        da.array() = norm * (act.y.col(t).array() - y_scaled.col(t).array()) /
                     (1.0 + (-act.a_out.col(t).array()).exp());
        g.w_out.noalias() += h_now.transpose() * da;
        g.b_out += da.sum();
        dh.noalias() += da * model.w_out.transpose();

        dz.array() = dh.array() * (htilde.array() - h_prev.array());
        dh_prev.array() = dh.array() * (1.0 - z.array());

        // Candidate branch: dgate = dL/d(pre-tanh activation).
        dgate.array() = dh.array() * z.array() * (1.0 - htilde.array().square());
        rh.array() = r.array() * h_prev.array();
        g.u_h.noalias() += dgate.transpose() * rh;
        g.b_h += dgate.colwise().sum().transpose();
        dq.noalias() = dgate * model.u_h;
        dr.array() = dq.array() * h_prev.array();
        dh_prev.array() += dq.array() * r.array();

        dgate.array() = dz.array() * z.array() * (1.0 - z.array());
        g.u_z.noalias() += dgate.transpose() * h_prev;
        g.b_z += dgate.colwise().sum().transpose();
        dh_prev.noalias() += dgate * model.u_z;

        dgate.array() = dr.array() * r.array() * (1.0 - r.array());
        g.u_r.noalias() += dgate.transpose() * h_prev;
        g.b_r += dgate.colwise().sum().transpose();
        dh_prev.noalias() += dgate * model.u_r;

        dh.swap(dh_prev);
    }
    g.w_enc.noalias() = dh.transpose() * x_scaled;
    g.b_enc = dh.colwise().sum().transpose();
    return g;
}

double seq_mse(const SeqModel& model, const Matrix& x_scaled, const Matrix& y_scaled) {
    const Matrix y = seq_forward(model, x_scaled);
    return (y - y_scaled).squaredNorm() /
           static_cast<double>(y_scaled.rows() * y_scaled.cols());
}

namespace {

struct SeqAdam {
    SeqGradients m, v;
    double mb_out = 0.0, vb_out = 0.0;
    long long step_count = 0;

    explicit SeqAdam(const SeqModel& model) {
        auto zero_like = [&](SeqGradients& g) {
            g.w_enc = Matrix::Zero(model.w_enc.rows(), model.w_enc.cols());
            g.b_enc = Vector::Zero(model.b_enc.size());
            for (Matrix* u : {&g.u_z, &g.u_r, &g.u_h})
                *u = Matrix::Zero(model.u_z.rows(), model.u_z.cols());
            for (Vector* b : {&g.b_z, &g.b_r, &g.b_h}) *b = Vector::Zero(model.b_z.size());
            g.w_out = Vector::Zero(model.w_out.size());
        };
        zero_like(m);
        zero_like(v);
    }

    template <typename T>
    void update_one(T& param, T& m_acc, T& v_acc, const T& grad, const SeqTrainConfig& cfg,
                    double bc1, double bc2) {
        m_acc = cfg.beta1 * m_acc + (1.0 - cfg.beta1) * grad;
        v_acc = (cfg.beta2 * v_acc.array() + (1.0 - cfg.beta2) * grad.array().square()).matrix();
        param -= (cfg.learning_rate * (m_acc / bc1).array() /
                  ((v_acc / bc2).cwiseSqrt().array() + cfg.eps))
                     .matrix();
    }

    void step(SeqModel& model, const SeqGradients& g, const SeqTrainConfig& cfg) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
        update_one(model.w_enc, m.w_enc, v.w_enc, g.w_enc, cfg, bc1, bc2);
        update_one(model.b_enc, m.b_enc, v.b_enc, g.b_enc, cfg, bc1, bc2);
        update_one(model.u_z, m.u_z, v.u_z, g.u_z, cfg, bc1, bc2);
        update_one(model.u_r, m.u_r, v.u_r, g.u_r, cfg, bc1, bc2);
        update_one(model.u_h, m.u_h, v.u_h, g.u_h, cfg, bc1, bc2);
        update_one(model.b_z, m.b_z, v.b_z, g.b_z, cfg, bc1, bc2);
        update_one(model.b_r, m.b_r, v.b_r, g.b_r, cfg, bc1, bc2);
        update_one(model.b_h, m.b_h, v.b_h, g.b_h, cfg, bc1, bc2);
        update_one(model.w_out, m.w_out, v.w_out, g.w_out, cfg, bc1, bc2);
        mb_out = cfg.beta1 * mb_out + (1.0 - cfg.beta1) * g.b_out;
        vb_out = cfg.beta2 * vb_out + (1.0 - cfg.beta2) * g.b_out * g.b_out;
        model.b_out -= cfg.learning_rate * (mb_out / bc1) / (std::sqrt(vb_out / bc2) + cfg.eps);
    }
};

}  // namespace

TrainHistory seq_train(SeqModel& model, const Matrix& X, const Matrix& Y,
                       const SeqTrainConfig& config) {
    config.validate();
    if (X.rows() == 0) throw Error("seq_train: empty training set");
    if (X.rows() != Y.rows()) throw Error("seq_train: X and Y row counts differ");
    if (X.cols() != model.input_dim() || Y.cols() != model.steps)
        throw Error("seq_train: data dimensions do not match the model");

    const Index n = X.rows();
    Index n_val =
        static_cast<Index>(std::llround(static_cast<double>(n) * config.validation_fraction));
    if (n_val >= n) n_val = n - 1;
    const auto order = shuffled_indices(static_cast<std::size_t>(n), config.seed);

    // Scalers come from the non-validation split only.
    model.in_mean = Vector::Zero(X.cols());
    model.in_std = Vector::Zero(X.cols());
    model.in_low = Vector::Constant(X.cols(), std::numeric_limits<double>::infinity());
    model.in_high = Vector::Constant(X.cols(), -std::numeric_limits<double>::infinity());
    double peak = 0.0;
    for (Index i = n_val; i < n; ++i) {
        const Index row = static_cast<Index>(order[static_cast<std::size_t>(i)]);
        model.in_mean += X.row(row).transpose();
        model.in_low = model.in_low.cwiseMin(X.row(row).transpose());
        model.in_high = model.in_high.cwiseMax(X.row(row).transpose());
        peak = std::max(peak, Y.row(row).cwiseAbs().maxCoeff());
    }
    model.in_mean /= static_cast<double>(n - n_val);
    for (Index i = n_val; i < n; ++i) {
        const Index row = static_cast<Index>(order[static_cast<std::size_t>(i)]);
        model.in_std.array() +=
            (X.row(row).transpose() - model.in_mean).array().square();
    }
    model.in_std = (model.in_std / static_cast<double>(n - n_val)).cwiseSqrt();
    // A constant input column carries no variance to normalize away; freeze
    // its scale at one so single-sample and degenerate designs stay trainable.
    for (Index j = 0; j < X.cols(); ++j)
        if (model.in_std[j] < 1e-12 * (1.0 + std::abs(model.in_mean[j]))) model.in_std[j] = 1.0;
    if (peak <= 0.0) throw Error("seq_train: all signals are identically zero");
    model.signal_scale = peak;

    auto scale_rows = [&](Index begin, Index end, Matrix& xs, Matrix& ys) {
        xs.resize(end - begin, X.cols());
        ys.resize(end - begin, Y.cols());
        for (Index i = begin; i < end; ++i) {
            const Index row = static_cast<Index>(order[static_cast<std::size_t>(i)]);
            xs.row(i - begin) =
                ((X.row(row).transpose() - model.in_mean).array() / model.in_std.array())
                    .transpose();
            ys.row(i - begin) = Y.row(row) / model.signal_scale;
        }
    };
    Matrix Xt, Yt, Xv, Yv;
    scale_rows(n_val, n, Xt, Yt);
    scale_rows(0, n_val, Xv, Yv);

    SeqAdam adam(model);
    Rng rng(config.seed ^ 0x9E3779B97F4A7C15ull);
    TrainHistory history;
    double best_val = std::numeric_limits<double>::infinity();
    SeqModel best_model = model;
    Index bad_epochs = 0;

    std::vector<std::size_t> idx(static_cast<std::size_t>(Xt.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (Index epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(idx);
        // Epoch train loss is the row-weighted mean of the minibatch losses
        // seen during the sweep; the early-stopping signal is the full
        // validation loss below.
        double train_loss = 0.0;
        for (std::size_t start = 0; start < idx.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t count = std::min<std::size_t>(
                static_cast<std::size_t>(config.batch_size), idx.size() - start);
            Matrix xb(static_cast<Index>(count), Xt.cols());
            Matrix yb(static_cast<Index>(count), Yt.cols());
            for (std::size_t k = 0; k < count; ++k) {
                xb.row(static_cast<Index>(k)) = Xt.row(static_cast<Index>(idx[start + k]));
                yb.row(static_cast<Index>(k)) = Yt.row(static_cast<Index>(idx[start + k]));
            }
            double batch_loss = 0.0;
            adam.step(model, seq_grad(model, xb, yb, &batch_loss), config);
            train_loss += batch_loss * static_cast<double>(count);
        }
        train_loss /= static_cast<double>(idx.size());

        const double val_loss = n_val > 0 ? seq_mse(model, Xv, Yv) : seq_mse(model, Xt, Yt);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw Error("seq_train: non-finite loss at epoch " + std::to_string(epoch));
        history.train_loss.push_back(train_loss);
        history.val_loss.push_back(val_loss);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_model = model;
            history.best_epoch = static_cast<int>(epoch);
            bad_epochs = 0;
        } else if (++bad_epochs > config.patience) {
            break;
        }
    }
    model = best_model;
    return history;
}

double seq_rel_l2(const SeqModel& model, const Matrix& X, const Matrix& Y) {
    Matrix xs(X.rows(), X.cols());
    for (Index i = 0; i < X.rows(); ++i)
        xs.row(i) =
            ((X.row(i).transpose() - model.in_mean).array() / model.in_std.array()).transpose();
    const Matrix pred = seq_forward(model, xs) * model.signal_scale;
    const double denom = Y.squaredNorm();
    if (denom <= 0.0) throw Error("seq_rel_l2: reference signals are identically zero");
    return std::sqrt((pred - Y).squaredNorm() / denom);
}

SeqEmulator::SeqEmulator(SeqModel model, std::vector<std::string> input_names)
    : model_(std::move(model)) {
    if (static_cast<Index>(input_names.size()) != model_.input_dim())
        throw Error("sequence emulator: name list does not match model input size");
    input_names_ = std::move(input_names);
    model_.input_names = input_names_;
    output_names_.reserve(static_cast<std::size_t>(model_.steps));
    for (Index t = 0; t < model_.steps; ++t)
        output_names_.push_back("c_" + std::to_string(t));
}

Matrix SeqEmulator::predict(const Matrix& x) const {
    Matrix xs(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
        xs.row(i) =
            ((x.row(i).transpose() - model_.in_mean).array() / model_.in_std.array())
                .transpose();
    return seq_forward(model_, xs) * model_.signal_scale;
}

void SeqEmulator::save(const std::string& path) const {
    ModelFile file;
    file.kind = "gru";
    file.add("inputs", input_names_);
    file.add_int("hidden", model_.hidden_dim());
    file.add_int("steps", model_.steps);
    file.add_scalar("dt_signal", model_.dt_signal);
    file.add_scalar("signal_scale", model_.signal_scale);
    auto add_matrix = [&](const std::string& key, const Matrix& w) {
        for (Index i = 0; i < w.rows(); ++i) file.add_matrix_row(key, w.row(i).transpose());
    };
    add_matrix("w_enc", model_.w_enc);
    file.add_vector("b_enc", model_.b_enc);
    add_matrix("u_z", model_.u_z);
    add_matrix("u_r", model_.u_r);
    add_matrix("u_h", model_.u_h);
    file.add_vector("b_z", model_.b_z);
    file.add_vector("b_r", model_.b_r);
    file.add_vector("b_h", model_.b_h);
    file.add_vector("w_out", model_.w_out);
    file.add_scalar("b_out", model_.b_out);
    file.add_vector("in_mean", model_.in_mean);
    file.add_vector("in_std", model_.in_std);
    file.add_vector("in_low", model_.in_low);
    file.add_vector("in_high", model_.in_high);
    for (const auto& [key, value] : meta) file.add_string("meta:" + key, value);
    file.save(path);
}

SeqEmulator SeqEmulator::from_model_file(const ModelFile& file) {
    if (file.kind != "gru") throw IoError("model file is '" + file.kind + "', expected gru");
    SeqModel model;
    model.w_enc = file.get_matrix("w_enc");
    model.b_enc = file.get_vector("b_enc");
    model.u_z = file.get_matrix("u_z");
    model.u_r = file.get_matrix("u_r");
    model.u_h = file.get_matrix("u_h");
    model.b_z = file.get_vector("b_z");
    model.b_r = file.get_vector("b_r");
    model.b_h = file.get_vector("b_h");
    model.w_out = file.get_vector("w_out");
    model.b_out = file.get_scalar("b_out");
    model.steps = file.get_int("steps");
    model.dt_signal = file.get_scalar("dt_signal");
    model.signal_scale = file.get_scalar("signal_scale");
    model.in_mean = file.get_vector("in_mean");
    model.in_std = file.get_vector("in_std");
    model.in_low = file.get_vector("in_low");
    model.in_high = file.get_vector("in_high");
    const Index hidden = file.get_int("hidden");
    if (model.w_enc.rows() != hidden || model.u_z.rows() != hidden ||
        model.u_z.cols() != hidden || model.w_out.size() != hidden)
        throw IoError("gru model: inconsistent dimensions");
    SeqEmulator emulator(std::move(model), file.get("inputs"));
    for (const auto& [key, values] : file.records)
        if (key.rfind("meta:", 0) == 0 && !values.empty())
            emulator.meta[key.substr(5)] = values.front();
    return emulator;
}

}  // namespace lumen
