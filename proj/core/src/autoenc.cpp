#include "fedlink/autoenc.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace fedlink {

namespace {

void check_dims(const std::vector<int>& dims) {
    if (dims.size() < 3) throw argument_error("model: need at least 3 layers");
    for (size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] < 1) throw argument_error("model: layer dims must be positive");
        if (dims[dims.size() - 1 - i] != dims[i]) {
            throw argument_error("model: encoder/decoder dims must be symmetric");
        }
    }
}

struct LayerView {
    Eigen::Map<const Matrix> w;  // out x in
    Eigen::Map<const Vector> b;  // out
};

struct MutLayerView {
    Eigen::Map<Matrix> w;
    Eigen::Map<Vector> b;
};

LayerView layer_view(const Vector& params, const std::vector<int>& dims, int l, long offset) {
    const int in = dims[static_cast<size_t>(l)];
    const int out = dims[static_cast<size_t>(l) + 1];
    return {Eigen::Map<const Matrix>(params.data() + offset, out, in),
            Eigen::Map<const Vector>(params.data() + offset + long(out) * in, out)};
}

MutLayerView layer_view(Vector& params, const std::vector<int>& dims, int l, long offset) {
    const int in = dims[static_cast<size_t>(l)];
    const int out = dims[static_cast<size_t>(l) + 1];
    return {Eigen::Map<Matrix>(params.data() + offset, out, in),
            Eigen::Map<Vector>(params.data() + offset + long(out) * in, out)};
}

long layer_size(const std::vector<int>& dims, int l) {
    return (long(dims[static_cast<size_t>(l)]) + 1) * dims[static_cast<size_t>(l) + 1];
}

double apply_act(double x, Activation a) {
    return a == Activation::sigmoid ? 1.0 / (1.0 + std::exp(-x)) : std::max(x, 0.0);
}

// derivative expressed through the activation output
double act_grad(double y, double x, Activation a) {
    return a == Activation::sigmoid ? y * (1.0 - y) : (x > 0.0 ? 1.0 : 0.0);
}

}  // namespace

long param_count(const std::vector<int>& layer_dims) {
    long p = 0;
    for (size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        p += (long(layer_dims[l]) + 1) * layer_dims[l + 1];
    }
    return p;
}

Model init_model(const std::vector<int>& layer_dims, Activation activation, uint64_t seed) {
    std::vector<Activation> acts(layer_dims.size() >= 2 ? layer_dims.size() - 2 : 0, activation);
    return init_model(layer_dims, acts, seed);
}

Model init_model(const std::vector<int>& layer_dims, const std::vector<Activation>& hidden_acts,
                 uint64_t seed) {
    check_dims(layer_dims);
    if (hidden_acts.size() != layer_dims.size() - 2) {
        throw argument_error("model: need one activation per hidden layer");
    }

    Model m;
    m.layer_dims = layer_dims;
    m.hidden_acts = hidden_acts;
    m.params = Vector::Zero(param_count(layer_dims));

    Rng rng(seed);
    long offset = 0;
    for (int l = 0; l < m.n_layers(); ++l) {
        const int in = layer_dims[static_cast<size_t>(l)];
        const int out = layer_dims[static_cast<size_t>(l) + 1];
        const double bound = std::sqrt(6.0 / double(in + out));
        std::uniform_real_distribution<double> u(-bound, bound);
        auto view = layer_view(m.params, m.layer_dims, l, offset);
        for (int c = 0; c < in; ++c) {
            for (int r = 0; r < out; ++r) view.w(r, c) = u(rng);
        }
        // biases stay zero
        offset += layer_size(m.layer_dims, l);
    }
    return m;
}

namespace {

struct ForwardCache {
    std::vector<Matrix> outputs;  // outputs[l] = activation after layer l-1; outputs[0] = input (b x dim)
    std::vector<Matrix> preacts;  // preacts[l] = pre-activation of layer l (b x out)
};

ForwardCache run_forward(const Model& m, const Matrix& batch) {
    if (batch.cols() != m.input_dim()) throw argument_error("forward: input dimension mismatch");
    if (batch.rows() < 1) throw argument_error("forward: empty batch");

    ForwardCache cache;
    cache.outputs.resize(static_cast<size_t>(m.n_layers()) + 1);
    cache.preacts.resize(static_cast<size_t>(m.n_layers()));
    cache.outputs[0] = batch;

    long offset = 0;
    for (int l = 0; l < m.n_layers(); ++l) {
        auto view = layer_view(m.params, m.layer_dims, l, offset);
        Matrix z = cache.outputs[static_cast<size_t>(l)] * view.w.transpose();
        z.rowwise() += view.b.transpose();
        cache.preacts[static_cast<size_t>(l)] = z;
        if (l < m.n_layers() - 1) {
            const Activation a = m.hidden_acts[static_cast<size_t>(l)];
            cache.outputs[static_cast<size_t>(l) + 1] =
                z.unaryExpr([a](double x) { return apply_act(x, a); });
        } else {
            cache.outputs[static_cast<size_t>(l) + 1] = std::move(z);  // linear output
        }
        offset += layer_size(m.layer_dims, l);
    }
    return cache;
}

}  // namespace

ForwardResult forward(const Model& m, const Matrix& batch) {
    ForwardCache cache = run_forward(m, batch);
    ForwardResult res;
    res.reconstruction = cache.outputs.back();
    res.embedding = cache.outputs[m.layer_dims.size() / 2];
    return res;
}

double mse_loss(const Matrix& reconstruction, const Matrix& input) {
    if (reconstruction.rows() != input.rows() || reconstruction.cols() != input.cols()) {
        throw argument_error("mse_loss: shape mismatch");
    }
    // per-point mean over features, summed over points
    return (reconstruction - input).squaredNorm() / double(input.cols());
}

Vector backward(const Model& m, const Matrix& batch) {
    ForwardCache cache = run_forward(m, batch);
    const Eigen::Index b = batch.rows();
    const Eigen::Index d = batch.cols();

    Vector grad = Vector::Zero(m.params.size());

    // d(L/b)/d recon for L = sum of per-point feature means
    Matrix delta = (cache.outputs.back() - batch) * (2.0 / (double(b) * double(d)));

    std::vector<long> offsets(static_cast<size_t>(m.n_layers()));
    long offset = 0;
    for (int l = 0; l < m.n_layers(); ++l) {
        offsets[static_cast<size_t>(l)] = offset;
        offset += layer_size(m.layer_dims, l);
    }

    for (int l = m.n_layers() - 1; l >= 0; --l) {
        auto view = layer_view(m.params, m.layer_dims, l, offsets[static_cast<size_t>(l)]);
        const Matrix& below = cache.outputs[static_cast<size_t>(l)];

        const int in = m.layer_dims[static_cast<size_t>(l)];
        const int out = m.layer_dims[static_cast<size_t>(l) + 1];
        Eigen::Map<Matrix> gw(grad.data() + offsets[static_cast<size_t>(l)], out, in);
        Eigen::Map<Vector> gb(grad.data() + offsets[static_cast<size_t>(l)] + long(out) * in, out);
        gw = delta.transpose() * below;
        gb = delta.colwise().sum().transpose();

        if (l > 0) {
            Matrix next = delta * view.w;  // b x in
            const Activation a = m.hidden_acts[static_cast<size_t>(l) - 1];
            const Matrix& y = cache.outputs[static_cast<size_t>(l)];
            const Matrix& z = cache.preacts[static_cast<size_t>(l) - 1];
            for (Eigen::Index r = 0; r < next.rows(); ++r) {
                for (Eigen::Index c = 0; c < next.cols(); ++c) {
                    next(r, c) *= act_grad(y(r, c), z(r, c), a);
                }
            }
            delta = std::move(next);
        }
    }
    return grad;
}

namespace {

void check_finite_step(const Vector& grad, const char* who) {
    if (!grad.allFinite()) {
        Eigen::Index bad = 0;
        for (Eigen::Index i = 0; i < grad.size(); ++i) {
            if (!std::isfinite(grad(i))) {
                bad = i;
                break;
            }
        }
        throw numeric_error(std::string(who) + ": non-finite gradient, first bad entry at index " +
                            std::to_string(bad));
    }
}

}  // namespace

Model sgd_step(const Model& m, const Matrix& batch, double eta) {
    if (eta < 0.0) throw argument_error("sgd_step: eta must be nonnegative");
    Vector grad = backward(m, batch);
    check_finite_step(grad, "sgd_step");
    Model next = m;
    next.params -= eta * grad;
    return next;
}

Model prox_sgd_step(const Model& m, const Matrix& batch, double eta, double mu,
                    const Vector& global_params) {
    if (eta < 0.0) throw argument_error("prox_sgd_step: eta must be nonnegative");
    if (mu < 0.0) throw argument_error("prox_sgd_step: mu must be nonnegative");
    if (global_params.size() != m.params.size()) {
        throw argument_error("prox_sgd_step: global parameter dimension mismatch");
    }
    Vector grad = backward(m, batch);
    grad += mu * (m.params - global_params);
    check_finite_step(grad, "prox_sgd_step");
    Model next = m;
    next.params -= eta * grad;
    return next;
}

ProbeHead probe_train(const Matrix& embeddings, const std::vector<int>& labels, int n_classes,
                      int iters, double eta, uint64_t seed) {
    const Eigen::Index n = embeddings.rows();
    const Eigen::Index z = embeddings.cols();
    if (static_cast<size_t>(n) != labels.size()) throw argument_error("probe_train: label count mismatch");
    if (n_classes < 2) throw argument_error("probe_train: need at least 2 classes");
    for (int l : labels) {
        if (l < 0 || l >= n_classes) throw argument_error("probe_train: label out of range");
    }

    Rng rng(seed);
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    ProbeHead head;
    head.weights.resize(n_classes, z);
    for (Eigen::Index r = 0; r < n_classes; ++r) {
        for (Eigen::Index c = 0; c < z; ++c) head.weights(r, c) = u(rng);
    }
    head.bias = Vector::Zero(n_classes);

    for (int it = 0; it < iters; ++it) {
        Matrix logits = embeddings * head.weights.transpose();
        logits.rowwise() += head.bias.transpose();
        // softmax with row-max shift
        Matrix probs = logits;
        for (Eigen::Index r = 0; r < n; ++r) {
            const double mx = probs.row(r).maxCoeff();
            probs.row(r) = (probs.row(r).array() - mx).exp();
            probs.row(r) /= probs.row(r).sum();
            probs(r, labels[static_cast<size_t>(r)]) -= 1.0;
        }
        probs /= double(n);
        head.weights -= eta * (probs.transpose() * embeddings);
        head.bias -= eta * probs.colwise().sum().transpose();
    }
    return head;
}

double probe_eval(const ProbeHead& head, const Matrix& embeddings, const std::vector<int>& labels) {
    const Eigen::Index n = embeddings.rows();
    if (static_cast<size_t>(n) != labels.size()) throw argument_error("probe_eval: label count mismatch");
    if (n == 0) throw argument_error("probe_eval: empty evaluation set");
    Matrix logits = embeddings * head.weights.transpose();
    logits.rowwise() += head.bias.transpose();
    long hits = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
        Eigen::Index pred = 0;
        logits.row(r).maxCoeff(&pred);
        if (static_cast<int>(pred) == labels[static_cast<size_t>(r)]) ++hits;
    }
    return double(hits) / double(n);
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw format_error(path + ": truncated checkpoint");
    return v;
}

constexpr char kMagic[4] = {'F', 'L', 'A', 'E'};
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void save_model(const std::string& path, const Model& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error(path + ": cannot open for writing");
    out.write(kMagic, 4);
    write_raw(out, kCheckpointVersion);
    write_raw(out, static_cast<uint32_t>(m.layer_dims.size()));
    for (int d : m.layer_dims) write_raw(out, static_cast<uint32_t>(d));
    write_raw(out, static_cast<uint32_t>(m.hidden_acts.size()));
    for (Activation a : m.hidden_acts) write_raw(out, static_cast<uint8_t>(a));
    write_raw(out, static_cast<uint64_t>(m.params.size()));
    out.write(reinterpret_cast<const char*>(m.params.data()),
              static_cast<std::streamsize>(sizeof(double) * size_t(m.params.size())));
    if (!out) throw format_error(path + ": write failed");
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error(path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw format_error(path + ": bad checkpoint magic at byte offset 0");
    }
    const auto version = read_raw<uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto n_dims = read_raw<uint32_t>(in, path);
    std::vector<int> dims(n_dims);
    for (auto& d : dims) d = static_cast<int>(read_raw<uint32_t>(in, path));
    const auto n_acts = read_raw<uint32_t>(in, path);
    std::vector<Activation> acts(n_acts);
    for (auto& a : acts) a = static_cast<Activation>(read_raw<uint8_t>(in, path));
    const auto p = read_raw<uint64_t>(in, path);

    check_dims(dims);
    if (acts.size() != dims.size() - 2) throw format_error(path + ": activation count mismatch");
    if (p != static_cast<uint64_t>(param_count(dims))) {
        throw format_error(path + ": parameter count does not match dims");
    }

    Model m;
    m.layer_dims = std::move(dims);
    m.hidden_acts = std::move(acts);
    m.params.resize(static_cast<Eigen::Index>(p));
    in.read(reinterpret_cast<char*>(m.params.data()),
            static_cast<std::streamsize>(sizeof(double) * p));
    if (!in) throw format_error(path + ": truncated parameter payload");
    return m;
}

}  // namespace fedlink
