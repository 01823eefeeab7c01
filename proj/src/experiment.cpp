#include "buzz/experiment.hpp"

#include "buzz/attacks.hpp"
#include "buzz/metrics.hpp"
#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace buzz {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::string join(const std::vector<std::string>& items, const char* sep = ", ") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

// Wraps argument errors from the library as config errors naming the key.
template <class F>
auto config_value(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

TrainConfig read_train(const ConfigDoc& doc, const std::string& section, const TrainConfig& fallback) {
    TrainConfig t = fallback;
    t.optimizer = config_value(section + ".optimizer", [&] {
        return parse_optimizer(doc.get_or(section, "optimizer", to_string(fallback.optimizer)));
    });
    t.learning_rate = doc.get_double_or(section, "learning_rate", fallback.learning_rate);
    t.batch_size = doc.get_size_or(section, "batch_size", fallback.batch_size);
    t.epochs = doc.get_size_or(section, "epochs", fallback.epochs);
    config_value(section, [&] {
        t.validate();
        return 0;
    });
    return t;
}

void write_train(ConfigDoc& doc, const std::string& section, const TrainConfig& t) {
    doc.set(section, "optimizer", to_string(t.optimizer));
    doc.set(section, "learning_rate", format_double(t.learning_rate));
    doc.set(section, "batch_size", std::to_string(t.batch_size));
    doc.set(section, "epochs", std::to_string(t.epochs));
}

LabeledDataset concat(const std::vector<LabeledDataset>& parts) {
    if (parts.size() == 1) return parts[0];
    LabeledDataset out = parts.at(0);
    std::size_t n = 0;
    for (const auto& p : parts) n += p.size();
    const Shape s = parts[0].image_shape();
    out.images = Tensor({n, s[0], s[1], s[2]});
    out.labels.clear();
    std::size_t at = 0;
    for (const auto& p : parts) {
        if (p.image_shape() != s) throw DataError("dataset parts disagree on image shape");
        std::copy(p.images.data().begin(), p.images.data().end(), out.images.data().begin() + static_cast<std::ptrdiff_t>(at));
        at += p.images.size();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    return out;
}

std::string attack_key(AttackFamily f) { return "attack." + to_string(f); }

} // namespace

// ---------------------------------------------------------------------------

std::uint64_t ExperimentConfig::seed_for(const std::string& purpose) const { return derive_seed(seed, purpose); }

ExperimentConfig ExperimentConfig::from_doc(const ConfigDoc& doc, const fs::path& base) {
    ExperimentConfig c;
    c.name = doc.get_or("experiment", "name", c.name);
    c.seed = doc.get_u64_or("experiment", "seed", c.seed);
    c.out = resolve(base, doc.get_or("experiment", "out", "out"));

    const std::string profile_name = doc.get_or("data", "profile", "synthetic");
    c.profile = config_value("data.profile", [&] { return profile_by_name(profile_name); });
    auto& d = c.data;
    d.source = doc.get_or("data", "source", d.source);
    d.classes = doc.get_size_or("data", "classes", d.classes);
    d.train_per_class = doc.get_size_or("data", "train_per_class", d.train_per_class);
    d.test_per_class = doc.get_size_or("data", "test_per_class", d.test_per_class);
    d.side = doc.get_size_or("data", "side", d.side);
    d.train_images = resolve(base, doc.get_or("data", "train_images", ""));
    d.train_labels = resolve(base, doc.get_or("data", "train_labels", ""));
    d.test_images = resolve(base, doc.get_or("data", "test_images", ""));
    d.test_labels = resolve(base, doc.get_or("data", "test_labels", ""));
    for (const auto& p : doc.get_list_or("data", "cifar_train", {})) d.cifar_train.push_back(resolve(base, p));
    for (const auto& p : doc.get_list_or("data", "cifar_test", {})) d.cifar_test.push_back(resolve(base, p));
    d.train_limit = doc.get_size_or("data", "train_limit", 0);
    d.test_limit = doc.get_size_or("data", "test_limit", 0);
    d.synthetic_fallback = doc.get_bool_or("data", "synthetic_fallback", false);

    c.network_preset = doc.get_or("network", "preset", c.network_preset);
    TrainConfig desk;
    desk.learning_rate = 1e-3;
    desk.epochs = 10;
    c.train = read_train(doc, "train", desk);

    c.variants = doc.get_list_or("defenses", "variants", c.variants);

    c.attacks.clear();
    for (const auto& name : doc.get_list_or("attacks", "families", {"fgsm"})) {
        const AttackFamily f = config_value("attacks.families", [&] { return parse_attack_family(name); });
        AttackConfig a = c.profile.attack_defaults(f, false);
        const std::string s = attack_key(f);
        a.eps = doc.get_double_or(s, "eps", a.eps);
        a.iterations = doc.get_size_or(s, "iterations", a.iterations);
        a.decay = doc.get_double_or(s, "decay", a.decay);
        a.r_init = doc.get_double_or(s, "r_init", a.r_init);
        a.cw_iterations = doc.get_size_or(s, "cw_iterations", a.cw_iterations);
        a.binary_search_steps = doc.get_size_or(s, "binary_search_steps", a.binary_search_steps);
        a.initial_c = doc.get_double_or(s, "initial_c", a.initial_c);
        a.cw_learning_rate = doc.get_double_or(s, "learning_rate", a.cw_learning_rate);
        a.beta = doc.get_double_or(s, "beta", a.beta);
        a.confidence = doc.get_double_or(s, "confidence", a.confidence);
        c.attacks.push_back(a);
    }
    c.targeted_modes.clear();
    for (const auto& m : doc.get_list_or("attacks", "modes", {"untargeted"})) {
        if (m == "untargeted") c.targeted_modes.push_back(false);
        else if (m == "targeted") c.targeted_modes.push_back(true);
        else throw ConfigError("config key 'attacks.modes': unknown mode '" + m + "'");
    }
    c.pipelines = doc.get_list_or("attacks", "pipelines", c.pipelines);
    c.eval_size = doc.get_size_or("attacks", "eval_size", c.eval_size);
    c.attack_chunk = doc.get_size_or("attacks", "chunk", c.attack_chunk);

    c.synthetic_preset = doc.get_or("synthetic", "preset", c.synthetic_preset);
    c.synthetic_rounds = doc.get_size_or("synthetic", "rounds", c.profile.synthetic_rounds);
    c.synthetic_lambda = doc.get_double_or("synthetic", "lambda", c.profile.synthetic_lambda);
    c.synthetic_train = read_train(doc, "synthetic", c.train);
    c.synthetic_max_set = doc.get_size_or("synthetic", "max_set_size", 0);

    c.map.variants = doc.get_list_or("map", "variants", c.variants);
    for (const auto& s : doc.get_list_or("map", "samples", {})) {
        c.map.samples.push_back(config_value("map.samples", [&] { return static_cast<std::size_t>(std::stoul(s)); }));
    }
    c.map.nx = doc.get_size_or("map", "nx", c.map.nx);
    c.map.ny = doc.get_size_or("map", "ny", c.map.ny);
    c.map.extent = doc.get_double_or("map", "extent", 0.0);
    c.map.mode = config_value("map.r_mode", [&] { return parse_radial_mode(doc.get_or("map", "r_mode", "gradient")); });

    c.published = resolve(base, doc.get_or("report", "published", ""));
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    return from_doc(ConfigDoc::load(path), path.parent_path());
}

void ExperimentConfig::validate() const {
    if (data.source != "synthetic" && data.source != "idx" && data.source != "cifar") {
        throw ConfigError("config key 'data.source': unknown source '" + data.source + "' (synthetic, idx, cifar)");
    }
    if (data.source == "synthetic" && (data.classes < 2 || data.side < 4 || data.train_per_class == 0 || data.test_per_class == 0)) {
        throw ConfigError("config section [data]: synthetic data needs classes >= 2, side >= 4 and nonzero sample counts");
    }
    config_value("network.preset", [&] { return buzz::network_preset(network_preset, {16, 16, 1}, 2); });
    config_value("synthetic.preset", [&] { return buzz::network_preset(synthetic_preset, {16, 16, 1}, 2); });
    if (variants.empty()) throw ConfigError("config key 'defenses.variants': no variants");
    for (const auto& v : variants) config_value("defenses.variants", [&] { return parse_variant(v, profile); });
    for (const auto& v : map.variants) {
        config_value("map.variants", [&] { return parse_variant(v, profile); });
        if (std::find(variants.begin(), variants.end(), v) == variants.end()) {
            throw ConfigError("config key 'map.variants': '" + v + "' is not listed in defenses.variants");
        }
    }
    if (attacks.empty()) throw ConfigError("config key 'attacks.families': no attacks");
    for (const auto& a : attacks) config_value(attack_key(a.family), [&] {
            a.validate();
            return 0;
        });
    for (const auto& p : pipelines) {
        if (p != "pure" && p != "mixed") throw ConfigError("config key 'attacks.pipelines': unknown pipeline '" + p + "'");
    }
    if (pipelines.empty()) throw ConfigError("config key 'attacks.pipelines': no pipelines");
    if (targeted_modes.empty()) throw ConfigError("config key 'attacks.modes': no modes");
    if (eval_size == 0) throw ConfigError("config key 'attacks.eval_size': must be >= 1");
    if (synthetic_rounds == 0) throw ConfigError("config key 'synthetic.rounds': must be >= 1");
    if (!(synthetic_lambda >= 0.0)) throw ConfigError("config key 'synthetic.lambda': must be >= 0");
    if (map.nx == 0 || map.ny == 0) throw ConfigError("config section [map]: nx and ny must be >= 1");
}

ConfigDoc ExperimentConfig::to_doc() const {
    ConfigDoc d;
    d.set("experiment", "name", name);
    d.set("experiment", "seed", std::to_string(seed));
    d.set("data", "profile", profile.name);
    d.set("data", "source", data.source);
    if (data.source == "synthetic") {
        d.set("data", "classes", std::to_string(data.classes));
        d.set("data", "train_per_class", std::to_string(data.train_per_class));
        d.set("data", "test_per_class", std::to_string(data.test_per_class));
        d.set("data", "side", std::to_string(data.side));
    } else if (data.source == "idx") {
        d.set("data", "train_images", data.train_images.string());
        d.set("data", "train_labels", data.train_labels.string());
        d.set("data", "test_images", data.test_images.string());
        d.set("data", "test_labels", data.test_labels.string());
    } else {
        std::vector<std::string> tr, te;
        for (const auto& p : data.cifar_train) tr.push_back(p.string());
        for (const auto& p : data.cifar_test) te.push_back(p.string());
        d.set("data", "cifar_train", join(tr, " "));
        d.set("data", "cifar_test", join(te, " "));
    }
    d.set("data", "train_limit", std::to_string(data.train_limit));
    d.set("data", "test_limit", std::to_string(data.test_limit));
    d.set("network", "preset", network_preset);
    write_train(d, "train", train);
    d.set("defenses", "variants", join(variants));
    std::vector<std::string> fams, modes;
    for (const auto& a : attacks) fams.push_back(to_string(a.family));
    for (bool t : targeted_modes) modes.push_back(t ? "targeted" : "untargeted");
    d.set("attacks", "families", join(fams));
    d.set("attacks", "modes", join(modes));
    d.set("attacks", "pipelines", join(pipelines));
    d.set("attacks", "eval_size", std::to_string(eval_size));
    for (const auto& a : attacks) {
        const std::string s = attack_key(a.family);
        d.set(s, "eps", format_double(a.eps));
        d.set(s, "iterations", std::to_string(a.iterations));
        if (a.family == AttackFamily::Mim) d.set(s, "decay", format_double(a.decay));
        if (a.family == AttackFamily::Pgd) d.set(s, "r_init", format_double(a.r_init));
        if (a.family == AttackFamily::Cw || a.family == AttackFamily::Ead) {
            d.set(s, "cw_iterations", std::to_string(a.cw_iterations));
            d.set(s, "binary_search_steps", std::to_string(a.binary_search_steps));
            d.set(s, "initial_c", format_double(a.initial_c));
            d.set(s, "learning_rate", format_double(a.cw_learning_rate));
            d.set(s, "beta", format_double(a.beta));
            d.set(s, "confidence", format_double(a.confidence));
        }
    }
    d.set("synthetic", "preset", synthetic_preset);
    d.set("synthetic", "rounds", std::to_string(synthetic_rounds));
    d.set("synthetic", "lambda", format_double(synthetic_lambda));
    write_train(d, "synthetic", synthetic_train);
    d.set("synthetic", "max_set_size", std::to_string(synthetic_max_set));
    return d;
}

ConfigDoc profile_doc(const DatasetProfile& p) {
    ConfigDoc d;
    d.set("profile", "name", p.name);
    d.set("profile", "transform", to_string(p.transform.family));
    d.set("profile", "bt2_threshold", format_double(p.bt2_threshold));
    d.set("profile", "synthetic_rounds", std::to_string(p.synthetic_rounds));
    d.set("profile", "synthetic_lambda", format_double(p.synthetic_lambda));
    std::vector<std::string> sizes;
    for (auto s : p.reference_resizes) sizes.push_back(std::to_string(s));
    d.set("profile", "resizes", join(sizes));
    for (auto f : all_attack_families()) {
        const auto a = p.attack_defaults(f, false);
        const std::string s = to_string(f);
        d.set(s, "eps", format_double(a.eps));
        if (f != AttackFamily::Fgsm && is_linf_family(f)) d.set(s, "iterations", std::to_string(a.iterations));
        if (f == AttackFamily::Mim) d.set(s, "decay", format_double(a.decay));
        if (f == AttackFamily::Pgd) d.set(s, "r_init", format_double(a.r_init));
        if (!is_linf_family(f)) {
            d.set(s, "cw_iterations", std::to_string(a.cw_iterations));
            d.set(s, "binary_search_steps", std::to_string(a.binary_search_steps));
            d.set(s, "beta", format_double(a.beta));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------

Datasets load_datasets(const ExperimentConfig& cfg, std::ostream& log) {
    const auto& d = cfg.data;
    Datasets out;
    auto synthetic = [&] {
        out.train = synth_blobs(d.classes, d.train_per_class, d.side, cfg.seed_for("data-train"));
        out.test = synth_blobs(d.classes, d.test_per_class, d.side, cfg.seed_for("data-test"));
        out.train.name = "synth_blobs-train";
        out.test.name = "synth_blobs-test";
    };
    auto require_file = [&](const fs::path& p, const std::string& key) {
        if (p.empty()) throw ConfigError("missing key '" + key + "'");
        if (!fs::exists(p)) throw ConfigError("config key '" + key + "': file not found: " + p.string());
    };
    try {
        if (d.source == "idx") {
            require_file(d.train_images, "data.train_images");
            require_file(d.train_labels, "data.train_labels");
            require_file(d.test_images, "data.test_images");
            require_file(d.test_labels, "data.test_labels");
            out.train = load_idx(d.train_images, d.train_labels, d.classes);
            out.test = load_idx(d.test_images, d.test_labels, d.classes);
        } else if (d.source == "cifar") {
            if (d.cifar_train.empty()) throw ConfigError("missing key 'data.cifar_train'");
            if (d.cifar_test.empty()) throw ConfigError("missing key 'data.cifar_test'");
            std::vector<LabeledDataset> tr, te;
            for (const auto& p : d.cifar_train) {
                require_file(p, "data.cifar_train");
                tr.push_back(load_cifar_binary(p, d.classes));
            }
            for (const auto& p : d.cifar_test) {
                require_file(p, "data.cifar_test");
                te.push_back(load_cifar_binary(p, d.classes));
            }
            out.train = concat(tr);
            out.test = concat(te);
        } else {
            synthetic();
        }
    } catch (const ConfigError& e) {
        if (!d.synthetic_fallback) throw;
        log << "data: " << e.what() << "; using synthetic blobs instead\n";
        synthetic();
    }
    if (d.train_limit && d.train_limit < out.train.size()) out.train = out.train.head(d.train_limit);
    if (d.test_limit && d.test_limit < out.test.size()) out.test = out.test.head(d.test_limit);
    out.train.validate();
    out.test.validate();
    if (out.train.height() != out.train.width()) throw DataError("square images required");
    log << "data: " << out.train.size() << " train / " << out.test.size() << " test images of "
        << shape_str(out.train.image_shape()) << ", " << out.train.class_count << " classes\n";
    return out;
}

fs::path bundle_dir(const ExperimentConfig& cfg, const std::string& variant) { return cfg.out / "bundles" / variant; }

std::string campaign_name(const std::string& defense, AttackFamily family, bool targeted, const std::string& pipeline) {
    return defense + "__" + to_string(family) + "__" + (targeted ? "targeted" : "untargeted") + "__" + pipeline + ".csv";
}

namespace {

std::string canonical_variant(const ExperimentConfig& cfg, const std::string& v) {
    return parse_variant(v, cfg.profile).name();
}

BuzzDefense load_defense(const ExperimentConfig& cfg, const std::string& variant) {
    const fs::path dir = bundle_dir(cfg, canonical_variant(cfg, variant));
    if (!fs::exists(dir / "manifest.ini")) {
        throw std::runtime_error("missing bundle " + dir.string() + " (run `buzzlab train` first)");
    }
    return load_bundle(dir);
}

std::map<std::string, double> read_accuracy(const ExperimentConfig& cfg) {
    const fs::path path = cfg.out / "accuracy.csv";
    if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + " (run `buzzlab train` first)");
    std::istringstream is(read_file_bytes(path));
    std::string line;
    std::getline(is, line);
    std::map<std::string, double> acc;
    while (std::getline(is, line)) {
        const auto c = split_csv_line(line);
        if (c.size() >= 2) acc[c[0]] = std::stod(c[1]);
    }
    return acc;
}

} // namespace

void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    const auto data = load_datasets(cfg, log);
    TrainConfig train = cfg.train;
    DefenseFactory factory({cfg.profile, cfg.network_preset, train, cfg.seed_for("defense")}, data.train);
    factory.log = [&](const std::string& s) { log << s << '\n'; };

    std::vector<std::string> names = {"vanilla"};
    for (const auto& v : cfg.variants) {
        const auto n = canonical_variant(cfg, v);
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
    std::ostringstream acc;
    acc << "defense,clean_accuracy,test_size\n";
    for (const auto& n : names) {
        const auto defense = factory.build(parse_variant(n, cfg.profile));
        const fs::path dir = bundle_dir(cfg, n);
        fs::remove_all(dir);
        save_bundle(defense, dir,
                    {{"experiment", cfg.name},
                     {"profile", cfg.profile.name},
                     {"network_preset", cfg.network_preset},
                     {"seed", std::to_string(cfg.seed)},
                     {"train_set", data.train.name.empty() ? cfg.data.source : data.train.name}});
        const double a = clean_accuracy(defense, data.test);
        acc << n << ',' << format_double(a) << ',' << data.test.size() << '\n';
        log << n << ": clean accuracy " << format_double(a) << " (" << defense.layers().size() << " layer"
            << (defense.layers().size() == 1 ? "" : "s") << ")\n";
    }
    write_text(cfg.out / "accuracy.csv", acc.str());
    write_text(cfg.out / "experiment.ini", cfg.to_doc().serialize());
}

void cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
    const auto data = load_datasets(cfg, log);
    const Shape shape = data.train.image_shape();
    const std::size_t k = data.train.class_count;

    SyntheticSpec syn;
    syn.architecture = network_preset(cfg.synthetic_preset, shape, k);
    syn.rounds = cfg.synthetic_rounds;
    syn.lambda = cfg.synthetic_lambda;
    syn.train = cfg.synthetic_train;
    syn.train.seed = cfg.seed_for("synthetic");
    syn.max_set_size = cfg.synthetic_max_set;

    // The pure synthetic model never sees the target, so one serves every defense.
    std::unique_ptr<Classifier> pure_model;
    std::ostringstream index;
    index << "defense,attack,mode,pipeline,samples,alpha,training_queries,attack_queries,file\n";
    fs::create_directories(cfg.out / "campaigns");

    for (const auto& v : cfg.variants) {
        const std::string name = canonical_variant(cfg, v);
        const auto defense = load_defense(cfg, name);
        const auto eval = split_first_correct(defense, data.test, cfg.eval_size);
        if (eval.data.size() == 0) throw std::runtime_error(name + ": empty evaluation set (no correctly classified test samples)");
        if (eval.exhausted) {
            log << name << ": only " << eval.data.size() << " correctly classified test samples (wanted " << cfg.eval_size << ")\n";
        }
        for (const auto& pipeline : cfg.pipelines) {
            Oracle oracle(defense);
            std::unique_ptr<Classifier> mixed_model;
            std::size_t training_queries = 0;
            const Classifier* synthetic = nullptr;
            if (pipeline == "pure") {
                if (!pure_model) {
                    TrainConfig t = syn.train;
                    t.seed = derive_seed(syn.train.seed, "synthetic-round", 0);
                    pure_model = std::make_unique<Classifier>(train(syn.architecture, data.train, t));
                    log << "pure synthetic model trained on " << data.train.size() << " labeled images\n";
                }
                synthetic = pure_model.get();
            } else {
                SyntheticReport rep;
                mixed_model = std::make_unique<Classifier>(
                    train_synthetic(oracle, data.train.images, syn, &rep, [&](const std::string& s) { log << name << ": " << s << '\n'; }));
                training_queries = oracle.queries();
                synthetic = mixed_model.get();
            }
            for (const auto& base : cfg.attacks) {
                for (bool targeted : cfg.targeted_modes) {
                    CampaignOptions opt;
                    opt.synthetic = syn;
                    opt.attack = base;
                    opt.attack.targeted = targeted;
                    opt.seed = cfg.seed_for("attack");
                    opt.attack_chunk = cfg.attack_chunk;
                    Oracle submit(defense);
                    auto report = attack_and_submit(*synthetic, submit, eval.data, opt, pipeline);
                    report.training_queries = training_queries;
                    // Rows refer to positions in the full test set.
                    for (auto& r : report.rows) r.sample_id = eval.source_indices[r.sample_id];
                    const std::string file = campaign_name(name, base.family, targeted, pipeline);
                    std::ostringstream csv;
                    report.write_csv(csv);
                    write_text(cfg.out / "campaigns" / file, csv.str());
                    index << name << ',' << to_string(base.family) << ',' << (targeted ? "targeted" : "untargeted") << ','
                          << pipeline << ',' << report.rows.size() << ',' << format_double(report.alpha()) << ','
                          << training_queries << ',' << report.attack_queries << ',' << file << '\n';
                    log << name << " " << to_string(base.family) << " " << (targeted ? "targeted" : "untargeted") << " "
                        << pipeline << ": alpha " << format_double(report.alpha()) << " over " << report.rows.size()
                        << " samples\n";
                }
            }
        }
    }
    write_text(cfg.out / "campaigns" / "index.csv", index.str());
}

void cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
    const auto acc = read_accuracy(cfg);
    if (!acc.count("vanilla")) throw std::runtime_error("accuracy.csv has no vanilla row");
    const double p = acc.at("vanilla");
    const fs::path index_path = cfg.out / "campaigns" / "index.csv";
    if (!fs::exists(index_path)) throw std::runtime_error("missing " + index_path.string() + " (run `buzzlab attack` first)");
    std::istringstream is(read_file_bytes(index_path));
    std::string line;
    std::getline(is, line);
    EvaluationReport rep;
    while (std::getline(is, line)) {
        const auto c = split_csv_line(line);
        if (c.size() < 9) continue;
        const fs::path file = cfg.out / "campaigns" / c[8];
        if (!fs::exists(file)) throw std::runtime_error("missing campaign file " + file.string());
        const auto rows = read_campaign_csv(read_file_bytes(file), file.string());
        if (!acc.count(c[0])) throw std::runtime_error("accuracy.csv has no row for " + c[0]);
        // A defense more accurate than vanilla would make gamma negative.
        const double p_d = std::min(acc.at(c[0]), p);
        rep.rows.push_back(make_row(c[0], c[1], c[3] + "-" + c[2], p, p_d, attack_success_rate(rows), rows.size()));
    }
    rep.add_best_rows();
    if (!cfg.published.empty()) {
        if (!fs::exists(cfg.published)) throw ConfigError("config key 'report.published': file not found: " + cfg.published.string());
        for (auto r : read_published(read_file_bytes(cfg.published), cfg.published.string())) {
            r.defense = "published:" + r.defense;
            rep.rows.push_back(r);
        }
    }
    std::ostringstream csv, scatter;
    rep.write_csv(csv);
    rep.write_scatter(scatter);
    write_text(cfg.out / "report.csv", csv.str());
    write_text(cfg.out / "scatter.csv", scatter.str());
    const std::string table = rep.format_table();
    write_text(cfg.out / "report.txt", table);
    log << table;
}

void cmd_map(const ExperimentConfig& cfg, std::ostream& log) {
    const auto data = load_datasets(cfg, log);
    std::vector<BuzzDefense> defenses;
    std::vector<std::string> names;
    for (const auto& v : cfg.map.variants) {
        names.push_back(canonical_variant(cfg, v));
        defenses.push_back(load_defense(cfg, names.back()));
    }
    std::vector<std::size_t> samples = cfg.map.samples;
    if (samples.empty()) {
        // First test image that every mapped defense labels correctly.
        for (std::size_t i = 0; i < data.test.size() && samples.empty(); ++i) {
            const Tensor x = data.test.images.rows(i, i + 1);
            bool ok = true;
            for (const auto& d : defenses) ok = ok && d.predict(x)[0] == data.test.labels[i];
            if (ok) samples.push_back(i);
        }
        if (samples.empty()) throw std::runtime_error("map: no test image is labeled correctly by every mapped defense");
    }
    GridConfig grid = default_grid(cfg.profile, data.test.image_shape(), cfg.seed_for("map"));
    grid.nx = cfg.map.nx;
    grid.ny = cfg.map.ny;
    grid.mode = cfg.map.mode;
    if (cfg.map.extent > 0.0) grid.x_max = grid.y_max = cfg.map.extent;

    fs::create_directories(cfg.out / "maps");
    std::ostringstream index;
    index << "defense,sample,true_label,origin_label,gray_fraction,r_mode,extent,file\n";
    for (std::size_t j = 0; j < defenses.size(); ++j) {
        for (auto s : samples) {
            if (s >= data.test.size()) throw ConfigError("config key 'map.samples': index " + std::to_string(s) + " out of range");
            const auto m = build_map(defenses[j], data.test.image(s), data.test.labels[s], grid);
            const std::string stem = names[j] + "_s" + std::to_string(s);
            render_map(m, cfg.out / "maps" / (stem + ".ppm"), cfg.out / "maps" / (stem + ".csv"));
            const int origin = m.at(m.nx / 2, m.ny / 2);
            index << names[j] << ',' << s << ',' << data.test.labels[s] << ',' << origin << ','
                  << format_double(m.gray_fraction()) << ',' << to_string(m.mode) << ',' << format_double(grid.x_max) << ','
                  << stem << ".ppm\n";
            log << stem << ": gray fraction " << format_double(m.gray_fraction()) << ", origin label " << origin << '\n';
        }
    }
    write_text(cfg.out / "maps" / "index.csv", index.str());
}

// ---------------------------------------------------------------------------

namespace {

struct CheckLog {
    std::ostringstream csv;
    std::size_t failures = 0;
    std::ostream& log;

    explicit CheckLog(std::ostream& l) : log(l) { csv << "check,passed,detail\n"; }

    void record(const std::string& name, bool passed, const std::string& detail) {
        csv << name << ',' << (passed ? 1 : 0) << ',' << detail << '\n';
        log << (passed ? "PASS " : "FAIL ") << name << " (" << detail << ")\n";
        failures += !passed;
    }
};

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -0.5, double hi = 0.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

void check_votes(CheckLog& out) {
    std::size_t tuples = 0, mismatches = 0, monotone = 0;
    for (std::size_t m = 1; m <= 4; ++m) {
        for (std::size_t k = 1; k <= 4; ++k) {
            std::vector<int> t(m, kAbstain);
            while (true) {
                int previous = 0;
                for (std::size_t kappa = 1; kappa <= m; ++kappa) {
                    const int got = vote(t, kappa);
                    std::vector<std::size_t> counts(k, 0);
                    for (int l : t)
                        if (l >= 0) counts[static_cast<std::size_t>(l)]++;
                    const auto top = std::max_element(counts.begin(), counts.end());
                    const bool unique = std::count(counts.begin(), counts.end(), *top) == 1;
                    const int expect = (*top >= kappa && unique) ? static_cast<int>(top - counts.begin()) : kAbstain;
                    mismatches += got != expect;
                    if (kappa > 1 && ((is_abstain(previous) && !is_abstain(got)) || (!is_abstain(got) && got != previous))) ++monotone;
                    previous = got;
                }
                ++tuples;
                std::size_t j = 0;
                while (j < m && t[j] == static_cast<int>(k) - 1) t[j++] = kAbstain;
                if (j == m) break;
                ++t[j];
            }
        }
    }
    out.record("vote_oracle", mismatches == 0, std::to_string(tuples) + " tuples; " + std::to_string(mismatches) + " mismatches");
    out.record("vote_kappa_monotone", monotone == 0, std::to_string(monotone) + " violations");
}

void check_delta(CheckLog& out) {
    const double table[3][4] = {{0.93, 0.93, 0.28, 0.66}, {0.93, 0.85, 0.68, 0.36}, {0.93, 0.76, 0.93, 0.22}};
    double worst = 0.0;
    for (const auto& row : table) worst = std::max(worst, std::abs(delta(row[0], row[1], 1.0 - row[2]).delta - row[3]));
    out.record("delta_table", worst <= 0.01, "max deviation " + format_double(std::round(worst * 1e6) / 1e6));
    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double identity = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double p = u(rng), p_d = p * u(rng), a = u(rng);
        const auto d = delta(p, p_d, a);
        identity = std::max(identity, std::abs(d.delta - (p - (p - d.gamma) * (1 - a))));
    }
    out.record("delta_identity", identity < 1e-12, "1000 random triples");
}

void check_gradients(CheckLog& out) {
    Rng rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto spec = parse_network("conv3x3 tanh pool dense5 tanh dense3", {6, 6, 1}, 3);
        const auto model = Classifier::initialize(spec, 100 + trial);
        Tensor x = random_tensor({1, 6, 6, 1}, rng);
        const int label[1] = {trial % 3};
        const Tensor g = model.loss_gradient(x, label);
        auto loss = [&](const Tensor& in) { return -std::log(model.scores(in)[static_cast<std::size_t>(label[0])]); };
        for (std::size_t i = 0; i < x.size(); i += 5) {
            const double keep = x[i];
            x[i] = keep + 1e-5;
            const double up = loss(x);
            x[i] = keep - 1e-5;
            const double down = loss(x);
            x[i] = keep;
            worst = std::max(worst, std::abs((up - down) / 2e-5 - g[i]));
        }
    }
    out.record("input_gradient", worst < 1e-4, "10 networks, max error below 1e-4: " + std::string(worst < 1e-4 ? "yes" : "no"));
}

void check_attack_budgets(CheckLog& out) {
    const auto model = Classifier::initialize(parse_network("conv3x4 relu pool dense3", {6, 6, 1}, 3), 13);
    Rng rng(14);
    std::size_t violations = 0, runs = 0;
    for (auto f : {AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Pgd, AttackFamily::Mim}) {
        for (int r = 0; r < 25; ++r) {
            AttackConfig c = profile_by_name("fashion-like").attack_defaults(f, r % 2 == 1);
            const Tensor x = random_tensor({1, 6, 6, 1}, rng);
            const int goal[1] = {r % 3};
            const Tensor adv = generate_adversarial(model, x, goal, c, static_cast<std::uint64_t>(r));
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (std::abs(adv[i] - x[i]) > c.linf_budget() + 1e-9 || adv[i] < -0.5 || adv[i] > 0.5) {
                    ++violations;
                    break;
                }
            }
            ++runs;
        }
    }
    out.record("linf_budget", violations == 0, std::to_string(runs) + " runs; " + std::to_string(violations) + " violations");
}

void check_recurrence(CheckLog& out) {
    Rng rng(15);
    const auto spec = parse_network("dense3", {4, 4, 1}, 3);
    const Classifier target(spec, {random_tensor({16, 3}, rng, -1, 1), random_tensor({3}, rng, -0.1, 0.1)});
    const Tensor x0 = random_tensor({16, 4, 4, 1}, rng, -0.4, 0.4);
    SyntheticSpec s;
    s.architecture = spec;
    s.rounds = 3;
    s.lambda = 0.1;
    s.train = {OptimizerKind::Adam, 1e-2, 16, 3, 5};
    Oracle o(target);
    SyntheticReport rep;
    train_synthetic(o, x0, s, &rep);
    const bool doubling = rep.set_sizes == std::vector<std::size_t>{16, 32, 64} && o.queries() == 112;
    out.record("synthetic_doubling", doubling, "sizes 16/32/64, 112 queries");
    s.lambda = 0.0;
    Oracle o2(target);
    train_synthetic(o2, x0, s, &rep);
    out.record("synthetic_fixed_point", rep.set_sizes == std::vector<std::size_t>{16, 16, 16} && o2.queries() == 48,
               "lambda 0 keeps 16 points");
}

void check_end_to_end(CheckLog& out, const fs::path& dir) {
    const auto train = synth_blobs(4, 60, 8, 16);
    const auto test = synth_blobs(4, 20, 8, 17);
    const auto profile = profile_by_name("synthetic");
    DefenseFactory factory({profile, "linear", {OptimizerKind::Adam, 1e-2, 32, 6, 0}, 18}, train);
    const auto vanilla = factory.build(parse_variant("vanilla", profile));
    const auto buzz2 = factory.build(parse_variant("buzz-2", profile));
    const double p = clean_accuracy(vanilla, test);
    EvaluationReport rep;
    for (const auto* d : {&vanilla, &buzz2}) {
        const double p_d = std::min(clean_accuracy(*d, test), p);
        const auto eval = split_first_correct(*d, test, 40).data;
        CampaignOptions opt;
        opt.synthetic.architecture = network_preset("linear", {8, 8, 1}, 4);
        opt.synthetic.rounds = 2;
        opt.synthetic.train = {OptimizerKind::Adam, 1e-2, 32, 4, 19};
        opt.attack = profile.attack_defaults(AttackFamily::Fgsm, false);
        opt.seed = 20;
        for (const std::string mode : {"pure", "mixed"}) {
            const auto r = mode == "pure" ? pure_blackbox_campaign(*d, train, eval, opt)
                                          : mixed_blackbox_campaign(*d, train.images, eval, opt);
            std::ostringstream csv;
            r.write_csv(csv);
            write_text(dir / (d->variant() + "__fgsm__untargeted__" + mode + ".csv"), csv.str());
            rep.rows.push_back(make_row(d->variant(), "fgsm", mode + "-untargeted", p, p_d, r.alpha(), r.rows.size()));
        }
    }
    rep.add_best_rows();
    std::ostringstream csv;
    rep.write_csv(csv);
    write_text(dir / "report.csv", csv.str());
    bool consistent = true;
    for (const auto& r : rep.rows) consistent = consistent && std::abs(r.delta - (r.gamma + (r.p - r.gamma) * r.alpha)) < 1e-12;
    out.record("end_to_end", consistent && p > 0.5, "tiny blob run, report rows " + std::to_string(rep.rows.size()));
}

} // namespace

std::size_t cmd_selfcheck(const fs::path& out_dir, std::ostream& log) {
    CheckLog out(log);
    check_votes(out);
    check_delta(out);
    check_gradients(out);
    check_attack_budgets(out);
    check_recurrence(out);
    check_end_to_end(out, out_dir / "selfcheck");
    write_text(out_dir / "selfcheck.csv", out.csv.str());
    log << (out.failures == 0 ? "selfcheck passed\n" : "selfcheck FAILED: " + std::to_string(out.failures) + " checks\n");
    return out.failures;
}

} // namespace buzz
