#include "buzz/models.hpp"

#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace buzz {

namespace {

constexpr std::size_t kInferenceChunk = 64;

std::size_t parse_count(const std::string& text, const std::string& token) {
    if (text.empty() || !std::all_of(text.begin(), text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw std::invalid_argument("network: cannot parse layer token '" + token + "'");
    }
    return std::stoul(text);
}

} // namespace

void NetworkSpec::validate() const {
    if (class_count < 2) throw std::invalid_argument("network: class count must be at least 2");
    if (input_shape.size() != 3 || shape_size(input_shape) == 0) {
        throw std::invalid_argument("network: input shape must be {H,W,C}, got " + shape_str(input_shape));
    }
    if (layers.empty()) throw std::invalid_argument("network: no layers");
    std::size_t h = input_shape[0], w = input_shape[1];
    bool flat = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = "network: layer " + std::to_string(i) + " ";
        switch (l.kind) {
        case LayerSpec::Kind::Conv:
            if (flat) throw std::invalid_argument(where + "convolution after a dense layer");
            if (l.kernel == 0 || l.kernel % 2 == 0) throw std::invalid_argument(where + "kernel must be odd");
            if (l.width == 0) throw std::invalid_argument(where + "zero filters");
            break;
        case LayerSpec::Kind::Pool:
            if (flat) throw std::invalid_argument(where + "pooling after a dense layer");
            if (h < 2 || w < 2) {
                throw std::invalid_argument(where + "pooling a " + std::to_string(h) + "x" + std::to_string(w) + " map");
            }
            h /= 2;
            w /= 2;
            break;
        case LayerSpec::Kind::Dense:
            if (l.width == 0) throw std::invalid_argument(where + "zero width");
            flat = true;
            break;
        case LayerSpec::Kind::Relu:
        case LayerSpec::Kind::Tanh:
            break;
        }
    }
    const auto& last = layers.back();
    if (last.kind != LayerSpec::Kind::Dense || last.width != class_count) {
        throw std::invalid_argument("network: final layer must be dense" + std::to_string(class_count));
    }
}

std::vector<Shape> NetworkSpec::parameter_shapes() const {
    validate();
    std::vector<Shape> shapes;
    std::size_t h = input_shape[0], w = input_shape[1], c = input_shape[2];
    std::size_t features = 0; // set once flattened
    for (const auto& l : layers) {
        switch (l.kind) {
        case LayerSpec::Kind::Conv:
            shapes.push_back({l.kernel, l.kernel, c, l.width});
            shapes.push_back({l.width});
            c = l.width;
            break;
        case LayerSpec::Kind::Pool:
            h /= 2;
            w /= 2;
            break;
        case LayerSpec::Kind::Dense: {
            const std::size_t in = features ? features : h * w * c;
            shapes.push_back({in, l.width});
            shapes.push_back({l.width});
            features = l.width;
            break;
        }
        default:
            break;
        }
    }
    return shapes;
}

std::size_t NetworkSpec::parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : parameter_shapes()) n += shape_size(s);
    return n;
}

std::string NetworkSpec::describe() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) os << ' ';
        const auto& l = layers[i];
        switch (l.kind) {
        case LayerSpec::Kind::Conv: os << "conv" << l.kernel << 'x' << l.width; break;
        case LayerSpec::Kind::Pool: os << "pool"; break;
        case LayerSpec::Kind::Dense: os << "dense" << l.width; break;
        case LayerSpec::Kind::Relu: os << "relu"; break;
        case LayerSpec::Kind::Tanh: os << "tanh"; break;
        }
    }
    return os.str();
}

NetworkSpec parse_network(const std::string& text, const Shape& input_shape, std::size_t class_count) {
    NetworkSpec spec;
    spec.class_count = class_count;
    spec.input_shape = input_shape;
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream is(cleaned);
    std::string token;
    while (is >> token) {
        LayerSpec l;
        if (token == "pool") {
            l.kind = LayerSpec::Kind::Pool;
        } else if (token == "relu") {
            l.kind = LayerSpec::Kind::Relu;
        } else if (token == "tanh") {
            l.kind = LayerSpec::Kind::Tanh;
        } else if (token.rfind("dense", 0) == 0) {
            l.kind = LayerSpec::Kind::Dense;
            l.width = parse_count(token.substr(5), token);
        } else if (token.rfind("conv", 0) == 0) {
            const auto x = token.find('x', 4);
            if (x == std::string::npos) throw std::invalid_argument("network: cannot parse layer token '" + token + "'");
            l.kind = LayerSpec::Kind::Conv;
            l.kernel = parse_count(token.substr(4, x - 4), token);
            l.width = parse_count(token.substr(x + 1), token);
        } else {
            throw std::invalid_argument("network: unknown layer token '" + token + "'");
        }
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

NetworkSpec network_preset(const std::string& name, const Shape& input_shape, std::size_t class_count) {
    const std::string k = std::to_string(class_count);
    if (name == "small") {
        return parse_network("conv3x8 relu pool conv3x8 relu pool dense64 relu dense" + k, input_shape, class_count);
    }
    if (name == "g") {
        return parse_network("conv3x64 relu conv3x64 relu pool conv3x128 relu conv3x128 relu pool "
                             "dense256 relu dense256 relu dense" + k,
                             input_shape, class_count);
    }
    if (name == "mlp") return parse_network("dense64 relu dense" + k, input_shape, class_count);
    if (name == "linear") return parse_network("dense" + k, input_shape, class_count);
    throw std::invalid_argument("network: unknown preset '" + name + "'");
}

std::vector<int> argmax_rows(const Tensor& matrix) {
    if (matrix.rank() != 2) throw ShapeError("argmax_rows: expected [N,k], got " + shape_str(matrix.shape()));
    const std::size_t n = matrix.dim(0), k = matrix.dim(1);
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = matrix.ptr() + r * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

Classifier::Classifier(NetworkSpec spec, std::vector<Tensor> params) : spec_(std::move(spec)), params_(std::move(params)) {
    const auto shapes = spec_.parameter_shapes();
    if (shapes.size() != params_.size()) {
        throw std::invalid_argument("classifier: spec needs " + std::to_string(shapes.size()) + " tensors, got " +
                                    std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i] != params_[i].shape()) {
            throw ShapeError("classifier: parameter " + std::to_string(i) + " expected " + shape_str(shapes[i]) +
                             ", got " + shape_str(params_[i].shape()));
        }
    }
}

Classifier Classifier::initialize(const NetworkSpec& spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init"));
    std::vector<Tensor> params;
    for (const auto& s : spec.parameter_shapes()) {
        Tensor t(s);
        if (s.size() > 1) {
            const std::size_t fan_in = shape_size(s) / s.back();
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (auto& v : t.data()) v = dist(rng);
        }
        params.push_back(std::move(t));
    }
    return Classifier(spec, std::move(params));
}

Var Classifier::forward(const Var& x, std::span<const Var> params) const {
    Var h = x;
    std::size_t p = 0;
    for (const auto& l : spec_.layers) {
        switch (l.kind) {
        case LayerSpec::Kind::Conv:
            h = conv2d(h, params[p], params[p + 1]);
            p += 2;
            break;
        case LayerSpec::Kind::Pool:
            h = max_pool2(h);
            break;
        case LayerSpec::Kind::Dense:
            if (h.shape().size() != 2) {
                const std::size_t n = h.shape()[0];
                h = reshape(h, {n, h.value().size() / n});
            }
            h = add_bias(matmul(h, params[p]), params[p + 1]);
            p += 2;
            break;
        case LayerSpec::Kind::Relu:
            h = relu(h);
            break;
        case LayerSpec::Kind::Tanh:
            h = tanh(h);
            break;
        }
    }
    return h;
}

Var Classifier::logits(const Var& x) const {
    std::vector<Var> p;
    p.reserve(params_.size());
    for (const auto& t : params_) p.push_back(x.tape().leaf(t));
    return forward(x, p);
}

void Classifier::check_batch(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != spec_.input_shape[0] || batch.dim(2) != spec_.input_shape[1] ||
        batch.dim(3) != spec_.input_shape[2]) {
        throw ShapeError("classifier: batch " + shape_str(batch.shape()) + " does not match input " +
                         shape_str(spec_.input_shape));
    }
}

Tensor Classifier::logits(const Tensor& batch) const {
    check_batch(batch);
    const std::size_t n = batch.dim(0), k = spec_.class_count;
    Tensor out({n, k});
    for (std::size_t b = 0; b < n; b += kInferenceChunk) {
        const std::size_t e = std::min(n, b + kInferenceChunk);
        Tape tape;
        Var z = logits(tape.leaf(batch.rows(b, e)));
        std::copy_n(z.value().ptr(), (e - b) * k, out.ptr() + b * k);
    }
    return out;
}

Tensor Classifier::scores(const Tensor& batch) const { return softmax(logits(batch)); }

Tensor Classifier::loss_gradient(const Tensor& batch, std::span<const int> labels) const {
    check_batch(batch);
    if (labels.size() != batch.dim(0)) throw std::invalid_argument("loss_gradient: one label per image required");
    Tensor out(batch.shape());
    const std::size_t n = batch.dim(0), stride = batch.size() / n;
    for (std::size_t b = 0; b < n; b += kInferenceChunk) {
        const std::size_t e = std::min(n, b + kInferenceChunk);
        Tape tape;
        Var x = tape.leaf(batch.rows(b, e), true);
        // Sum of per-sample losses, so each row is independent of batch size.
        Var loss = scale(cross_entropy(logits(x), labels.subspan(b, e - b)), static_cast<double>(e - b));
        tape.backward(loss);
        std::copy_n(x.grad().ptr(), (e - b) * stride, out.ptr() + b * stride);
    }
    return out;
}

std::vector<int> Classifier::predict(const Tensor& batch) const { return argmax_rows(logits(batch)); }

std::vector<Tensor> Classifier::network_loss_gradients(const Tensor& image, int label) const {
    const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    const int labels[1] = {label};
    return {loss_gradient(batch, labels).reshaped(image.shape())};
}

void Classifier::save(const std::filesystem::path& path) const { write_checkpoint(path, params_); }

Classifier Classifier::load(const NetworkSpec& spec, const std::filesystem::path& path) {
    return Classifier(spec, read_checkpoint(path));
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train: learning rate must be positive");
    }
}

double mean_cross_entropy(const Classifier& model, const LabeledDataset& data, const InputMap& input_map) {
    double total = 0.0;
    for (std::size_t b = 0; b < data.size(); b += kInferenceChunk) {
        const std::size_t e = std::min(data.size(), b + kInferenceChunk);
        Tensor batch = data.images.rows(b, e);
        if (input_map) batch = input_map(batch);
        Tape tape;
        Var loss = cross_entropy(model.logits(tape.leaf(std::move(batch))),
                                 std::span<const int>(data.labels).subspan(b, e - b));
        total += loss.value().item() * static_cast<double>(e - b);
    }
    return total / static_cast<double>(data.size());
}

Classifier train(const NetworkSpec& spec, const LabeledDataset& data, const TrainConfig& cfg, TrainReport* report,
                 const InputMap& input_map) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    data.validate();
    if (data.class_count != spec.class_count) {
        throw std::invalid_argument("train: dataset has " + std::to_string(data.class_count) +
                                    " classes, network expects " + std::to_string(spec.class_count));
    }

    Classifier model = Classifier::initialize(spec, cfg.seed);
    if (report) {
        *report = {};
        report->initial_loss = mean_cross_entropy(model, data, input_map);
    }

    Optimizer opt({.kind = cfg.optimizer, .learning_rate = cfg.learning_rate});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Tensor> grads;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + b, e - b);
            Tensor batch = gather_rows(data.images, idx);
            if (input_map) batch = input_map(batch);
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (auto i : idx) labels.push_back(data.labels[i]);

            Tape tape;
            std::vector<Var> p;
            for (const auto& t : model.params()) p.push_back(tape.leaf(t, true));
            Var loss = cross_entropy(model.forward(tape.leaf(std::move(batch)), p), labels);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            grads.clear();
            for (const auto& v : p) grads.push_back(v.grad());
            opt.step(model.mutable_params(), grads);
            epoch_total += value * static_cast<double>(idx.size());
        }
        if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
    }

    if (report) {
        report->final_loss = mean_cross_entropy(model, data, input_map);
        std::size_t correct = 0;
        for (std::size_t b = 0; b < data.size(); b += 256) {
            const std::size_t e = std::min(data.size(), b + 256);
            Tensor batch = data.images.rows(b, e);
            if (input_map) batch = input_map(batch);
            const auto pred = model.predict(batch);
            for (std::size_t i = b; i < e; ++i) correct += pred[i - b] == data.labels[i];
        }
        report->train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    }
    return model;
}

} // namespace buzz
