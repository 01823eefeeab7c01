#include "buzz/defense.hpp"

#include "buzz/config.hpp"
#include "buzz/random.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace buzz {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double parse_theta(const std::string& text, const std::string& name) {
    std::size_t used = 0;
    double theta = 0.0;
    try {
        theta = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) throw std::invalid_argument("unknown defense variant '" + name + "'");
    if (theta > 1.0 && theta <= 100.0 && text.find('.') == std::string::npos) theta /= 100.0; // "bt2-95"
    if (!(theta > 0.0 && theta <= 1.0)) {
        throw std::invalid_argument("defense variant '" + name + "': threshold must be in (0,1]");
    }
    return theta;
}

std::string shape_token(const Shape& s) {
    std::ostringstream os;
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    return os.str();
}

Shape parse_shape_token(const std::string& text) {
    Shape s;
    std::stringstream is(text);
    std::string part;
    while (std::getline(is, part, 'x')) s.push_back(std::stoul(part));
    return s;
}

} // namespace

int threshold_label(std::span<const double> scores, std::optional<double> theta) {
    if (scores.empty()) throw std::invalid_argument("threshold_label: empty score vector");
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        if (scores[j] > scores[best]) best = j;
    }
    if (theta && scores[best] < *theta) return kAbstain;
    return static_cast<int>(best);
}

int vote(std::span<const int> labels, std::size_t kappa) {
    if (kappa < 1 || kappa > labels.size()) {
        throw std::invalid_argument("vote: kappa " + std::to_string(kappa) + " outside [1," +
                                    std::to_string(labels.size()) + "]");
    }
    std::map<int, std::size_t> counts;
    for (int l : labels) {
        if (!is_abstain(l)) counts[l]++;
    }
    int winner = kAbstain;
    std::size_t best = 0, at_best = 0;
    for (auto [label, n] : counts) {
        if (n > best) {
            best = n;
            winner = label;
            at_best = 1;
        } else if (n == best) {
            ++at_best;
        }
    }
    return best >= kappa && at_best == 1 ? winner : kAbstain;
}

void ProtectedLayer::validate() const {
    transform.validate();
    resize.validate();
    if (transform.height() != resize.source || transform.width() != resize.source) {
        throw std::invalid_argument("protected layer: transform is " + shape_str(transform.image_shape()) +
                                    " but resize expects side " + std::to_string(resize.source));
    }
    const Shape expect = {resize.target, resize.target, transform.channels()};
    if (network.input_shape() != expect) {
        throw std::invalid_argument("protected layer: network input " + shape_str(network.input_shape()) +
                                    " does not match resized image " + shape_str(expect));
    }
    if (threshold && !(*threshold > 0.0 && *threshold <= 1.0)) {
        throw std::invalid_argument("protected layer: threshold must be in (0,1]");
    }
}

Tensor ProtectedLayer::preprocess(const Tensor& batch) const {
    return resize_bilinear(resize, apply_linear(transform, batch));
}

Var ProtectedLayer::preprocess(const Var& batch) const { return resize_bilinear(resize, apply_linear(transform, batch)); }

Tensor ProtectedLayer::scores(const Tensor& batch) const { return network.scores(preprocess(batch)); }

std::vector<int> ProtectedLayer::labels(const Tensor& batch) const {
    const Tensor s = scores(batch);
    const std::size_t n = s.dim(0), k = s.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = threshold_label(std::span<const double>(s.ptr() + i * k, k), threshold);
    return out;
}

std::string DefenseVariant::name() const {
    switch (kind) {
    case Kind::Vanilla: return "vanilla";
    case Kind::Buzz: return "buzz-" + std::to_string(m);
    case Kind::Bt: return "bt-" + format_double(theta);
    case Kind::Bt2: return "bt2-" + format_double(theta);
    }
    return "?";
}

std::vector<std::size_t> DefenseVariant::resize_indices() const {
    switch (kind) {
    case Kind::Vanilla:
    case Kind::Bt: return {};
    case Kind::Bt2: return {0, 7};
    case Kind::Buzz:
        switch (m) {
        case 1: return {0};
        case 2: return {0, 7};
        case 4: return {0, 2, 4, 6};
        case 8: return {0, 1, 2, 3, 4, 5, 6, 7};
        }
    }
    throw std::invalid_argument("defense variant: unsupported layer count " + std::to_string(m));
}

std::size_t DefenseVariant::layer_count() const {
    return kind == Kind::Vanilla || kind == Kind::Bt ? 1 : resize_indices().size();
}

DefenseVariant parse_variant(const std::string& raw, const DatasetProfile& profile) {
    const std::string name = lower(raw);
    DefenseVariant v;
    if (name == "vanilla") return v;
    if (name.rfind("buzz-", 0) == 0) {
        v.kind = DefenseVariant::Kind::Buzz;
        const std::string m = name.substr(5);
        if (m != "1" && m != "2" && m != "4" && m != "8") {
            throw std::invalid_argument("unknown defense variant '" + raw + "' (BUZz-m needs m in {1,2,4,8})");
        }
        v.m = std::stoul(m);
        return v;
    }
    if (name.rfind("bt2-", 0) == 0) {
        v.kind = DefenseVariant::Kind::Bt2;
        v.m = 2;
        const std::string t = name.substr(4);
        v.theta = t == "default" ? profile.bt2_threshold : parse_theta(t, raw);
        return v;
    }
    if (name.rfind("bt-", 0) == 0) {
        v.kind = DefenseVariant::Kind::Bt;
        v.theta = parse_theta(name.substr(3), raw);
        return v;
    }
    throw std::invalid_argument("unknown defense variant '" + raw + "'");
}

BuzzDefense::BuzzDefense(std::string variant, std::vector<ProtectedLayer> layers, std::size_t kappa)
    : variant_(std::move(variant)), layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("defense: no layers");
    for (const auto& l : layers_) {
        l.validate();
        if (l.transform.image_shape() != layers_[0].transform.image_shape()) {
            throw std::invalid_argument("defense: layers disagree on the input shape");
        }
        if (l.network.class_count() != layers_[0].network.class_count()) {
            throw std::invalid_argument("defense: layers disagree on the class count");
        }
    }
    set_kappa(kappa);
}

void BuzzDefense::set_kappa(std::size_t kappa) {
    if (kappa < 1 || kappa > layers_.size()) {
        throw std::invalid_argument("defense: kappa " + std::to_string(kappa) + " outside [1," +
                                    std::to_string(layers_.size()) + "]");
    }
    kappa_ = kappa;
}

std::vector<std::vector<int>> BuzzDefense::layer_labels(const Tensor& batch) const {
    std::vector<std::vector<int>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l.labels(batch));
    return out;
}

std::vector<int> BuzzDefense::predict(const Tensor& batch) const {
    const auto per_layer = layer_labels(batch);
    const std::size_t n = batch.dim(0);
    std::vector<int> out(n);
    std::vector<int> votes(layers_.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < layers_.size(); ++j) votes[j] = per_layer[j][i];
        out[i] = vote(votes, kappa_);
    }
    return out;
}

std::size_t BuzzDefense::class_count() const { return layers_.at(0).network.class_count(); }

Shape BuzzDefense::input_shape() const { return layers_.at(0).transform.image_shape(); }

std::vector<Tensor> BuzzDefense::network_loss_gradients(const Tensor& image, int label) const {
    const Shape shape = input_shape();
    if (image.shape() != shape) {
        throw ShapeError("defense: image " + shape_str(image.shape()) + " does not match input " + shape_str(shape));
    }
    const int labels[1] = {label};
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        Tape tape;
        Var x = tape.leaf(image.reshaped({1, shape[0], shape[1], shape[2]}), true);
        Var loss = cross_entropy(l.network.logits(l.preprocess(x)), labels);
        tape.backward(loss);
        out.push_back(x.grad().reshaped(shape));
    }
    return out;
}

DefenseFactory::DefenseFactory(Options options, const LabeledDataset& train_data)
    : options_(std::move(options)), data_(train_data) {
    data_.validate();
    options_.train.validate();
    if (options_.profile.reference_resizes.size() != 8) {
        throw std::invalid_argument("defense factory: profile resize set must have 8 entries");
    }
}

std::uint64_t DefenseFactory::transform_seed(std::size_t resize_index) const {
    return derive_seed(options_.seed, "layer-transform", resize_index);
}

std::uint64_t DefenseFactory::train_seed(std::size_t resize_index) const {
    return derive_seed(options_.seed, "layer-train", resize_index);
}

const Classifier& DefenseFactory::vanilla() {
    if (!vanilla_) {
        TrainConfig cfg = options_.train;
        cfg.seed = derive_seed(options_.seed, "vanilla-train");
        const auto spec = network_preset(options_.network_preset, data_.image_shape(), data_.class_count);
        TrainReport report;
        vanilla_ = train(spec, data_, cfg, &report);
        if (log) {
            log("trained vanilla network: train accuracy " + format_double(report.train_accuracy) + ", loss " +
                format_double(report.initial_loss) + " -> " + format_double(report.final_loss));
        }
    }
    return *vanilla_;
}

const ProtectedLayer& DefenseFactory::layer(std::size_t resize_index) {
    auto it = layers_.find(resize_index);
    if (it != layers_.end()) return it->second;
    const auto sizes = options_.profile.resize_set(data_.height());
    if (resize_index >= sizes.size()) throw std::out_of_range("defense factory: resize index out of range");
    if (data_.height() != data_.width()) throw std::invalid_argument("defense factory: square images required");

    ProtectedLayer layer;
    layer.transform = sample_linear(options_.profile, data_.image_shape(), transform_seed(resize_index));
    layer.resize = {data_.height(), sizes[resize_index]};
    const auto spec = network_preset(options_.network_preset, {layer.resize.target, layer.resize.target, data_.channels()},
                                     data_.class_count);
    TrainConfig cfg = options_.train;
    cfg.seed = train_seed(resize_index);
    layer.train_seed = cfg.seed;
    TrainReport report;
    const LinearTransform t = layer.transform;
    const ResizeOp r = layer.resize;
    layer.network = train(spec, data_, cfg, &report, [&t, r](const Tensor& b) { return resize_bilinear(r, apply_linear(t, b)); });
    if (log) {
        log("trained layer " + std::to_string(resize_index) + " (resize " + std::to_string(r.source) + "->" +
            std::to_string(r.target) + "): train accuracy " + format_double(report.train_accuracy));
    }
    return layers_.emplace(resize_index, std::move(layer)).first->second;
}

BuzzDefense DefenseFactory::build(const DefenseVariant& variant) {
    std::vector<ProtectedLayer> layers;
    switch (variant.kind) {
    case DefenseVariant::Kind::Vanilla:
    case DefenseVariant::Kind::Bt: {
        ProtectedLayer l;
        l.transform = LinearTransform::identity(data_.image_shape());
        l.resize = {data_.height(), data_.height()};
        l.network = vanilla();
        l.train_seed = derive_seed(options_.seed, "vanilla-train");
        if (variant.kind == DefenseVariant::Kind::Bt) l.threshold = variant.theta;
        layers.push_back(std::move(l));
        break;
    }
    case DefenseVariant::Kind::Buzz:
    case DefenseVariant::Kind::Bt2:
        for (auto j : variant.resize_indices()) layers.push_back(layer(j));
        if (variant.kind == DefenseVariant::Kind::Bt2) layers.back().threshold = variant.theta;
        break;
    }
    const std::size_t kappa = layers.size();
    return BuzzDefense(variant.name(), std::move(layers), kappa);
}

BuzzDefense build_buzz(const DatasetProfile& profile, const LabeledDataset& base_data, const DefenseVariant& variant,
                       std::uint64_t seed, const TrainConfig& train, const std::string& network_preset) {
    DefenseFactory factory({profile, network_preset, train, seed}, base_data);
    return factory.build(variant);
}

void save_bundle(const BuzzDefense& defense, const std::filesystem::path& dir,
                 const std::vector<std::pair<std::string, std::string>>& extra) {
    std::filesystem::create_directories(dir);
    ConfigDoc manifest;
    manifest.set("defense", "variant", defense.variant());
    manifest.set("defense", "kappa", std::to_string(defense.kappa()));
    manifest.set("defense", "layers", std::to_string(defense.layers().size()));
    manifest.set("defense", "class_count", std::to_string(defense.class_count()));
    manifest.set("defense", "input", shape_token(defense.input_shape()));
    for (const auto& [k, v] : extra) manifest.set("defense", k, v);
    for (std::size_t j = 0; j < defense.layers().size(); ++j) {
        const auto& l = defense.layers()[j];
        const std::string section = "layer." + std::to_string(j);
        const std::string ckpt = "layer_" + std::to_string(j) + ".bzw";
        const std::string tfile = "transform_" + std::to_string(j) + ".bzw";
        manifest.set(section, "network", l.network.spec().describe());
        manifest.set(section, "resize_source", std::to_string(l.resize.source));
        manifest.set(section, "resize_target", std::to_string(l.resize.target));
        manifest.set(section, "transform_family", to_string(l.transform.family));
        manifest.set(section, "transform_seed", std::to_string(l.transform.seed));
        manifest.set(section, "shared_a", l.transform.shared_a ? "true" : "false");
        manifest.set(section, "shared_b", l.transform.shared_b ? "true" : "false");
        manifest.set(section, "train_seed", std::to_string(l.train_seed));
        manifest.set(section, "threshold", l.threshold ? format_double(*l.threshold) : "none");
        manifest.set(section, "checkpoint", ckpt);
        manifest.set(section, "transform", tfile);
        l.network.save(dir / ckpt);
        const std::size_t c = l.transform.channels(), h = l.transform.height(), w = l.transform.width();
        const std::vector<Tensor> a_parts(l.transform.a.begin(), l.transform.a.end());
        const std::vector<Tensor> b_parts(l.transform.b.begin(), l.transform.b.end());
        const std::vector<Tensor> record = {stack(a_parts).reshaped({c, w, w}), stack(b_parts).reshaped({c, h, w})};
        write_checkpoint(dir / tfile, record);
    }
    manifest.save(dir / "manifest.ini");
}

BuzzDefense load_bundle(const std::filesystem::path& dir) {
    const auto manifest = ConfigDoc::load(dir / "manifest.ini");
    const std::size_t m = manifest.get_size("defense", "layers");
    const std::size_t k = manifest.get_size("defense", "class_count");
    const Shape input = parse_shape_token(manifest.get("defense", "input"));
    std::vector<ProtectedLayer> layers;
    for (std::size_t j = 0; j < m; ++j) {
        const std::string section = "layer." + std::to_string(j);
        ProtectedLayer l;
        l.resize = {manifest.get_size(section, "resize_source"), manifest.get_size(section, "resize_target")};
        const Shape net_input = {l.resize.target, l.resize.target, input.at(2)};
        l.network = Classifier::load(parse_network(manifest.get(section, "network"), net_input, k),
                                     dir / manifest.get(section, "checkpoint"));
        const auto record = read_checkpoint(dir / manifest.get(section, "transform"));
        if (record.size() != 2 || record[0].rank() != 3 || record[1].rank() != 3) {
            throw std::runtime_error("bundle " + dir.string() + ": malformed transform record for " + section);
        }
        for (std::size_t c = 0; c < record[0].dim(0); ++c) {
            l.transform.a.push_back(record[0].slice0(c));
            l.transform.b.push_back(record[1].slice0(c));
        }
        const std::string family = manifest.get(section, "transform_family");
        l.transform.family = family == "gaussian"      ? TransformFamily::Gaussian
                             : family == "sparse-bias" ? TransformFamily::SparseBias
                                                       : TransformFamily::Identity;
        l.transform.seed = manifest.get_u64_or(section, "transform_seed", 0);
        l.transform.shared_a = manifest.get_bool_or(section, "shared_a", true);
        l.transform.shared_b = manifest.get_bool_or(section, "shared_b", true);
        l.train_seed = manifest.get_u64_or(section, "train_seed", 0);
        const std::string threshold = manifest.get(section, "threshold");
        if (threshold != "none") l.threshold = manifest.get_double(section, "threshold");
        layers.push_back(std::move(l));
    }
    return BuzzDefense(manifest.get("defense", "variant"), std::move(layers), manifest.get_size("defense", "kappa"));
}

} // namespace buzz
