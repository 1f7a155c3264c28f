#include "rdd/config.hpp"

#include "rdd/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace rdd {

namespace {

struct BadValue {
    std::string why;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& s) {
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw BadValue{"'" + s + "' is not a valid number"};
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw BadValue{"'" + s + "' is not a boolean (true/false)"};
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

Field int_field(std::string sec, std::string key, int& v) {
    return {std::move(sec), std::move(key), [&v] { return std::to_string(v); },
            [&v](const std::string& s) { v = parse_number<int>(s); }};
}
Field u64_field(std::string sec, std::string key, std::uint64_t& v) {
    return {std::move(sec), std::move(key), [&v] { return std::to_string(v); },
            [&v](const std::string& s) { v = parse_number<std::uint64_t>(s); }};
}
Field dbl_field(std::string sec, std::string key, double& v) {
    return {std::move(sec), std::move(key), [&v] { return fmt_double(v); },
            [&v](const std::string& s) { v = parse_number<double>(s); }};
}
Field bool_field(std::string sec, std::string key, bool& v) {
    return {std::move(sec), std::move(key), [&v] { return std::string(v ? "true" : "false"); },
            [&v](const std::string& s) { v = parse_bool(s); }};
}
Field str_field(std::string sec, std::string key, std::string& v) {
    return {std::move(sec), std::move(key), [&v] { return v; }, [&v](const std::string& s) { v = s; }};
}

std::string lr_name(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }
LrSchedule parse_lr(const std::string& s) {
    if (s == "cosine") return LrSchedule::cosine;
    if (s == "constant") return LrSchedule::constant;
    throw BadValue{"'" + s + "' is not a learning-rate schedule (cosine/constant)"};
}
std::string omega_name(OmegaRule r) { return r == OmegaRule::truncated_snr ? "truncated_snr" : "none"; }
OmegaRule parse_omega(const std::string& s) {
    if (s == "truncated_snr") return OmegaRule::truncated_snr;
    if (s == "none") return OmegaRule::none;
    throw BadValue{"'" + s + "' is not a weighting rule (truncated_snr/none)"};
}

Field lr_field(std::string sec, LrSchedule& v) {
    return {std::move(sec), "lr_schedule", [&v] { return lr_name(v); },
            [&v](const std::string& s) { v = parse_lr(s); }};
}

std::vector<Field> fields(ExperimentConfig& c) {
    std::vector<Field> f;
    auto& d = c.dataset;
    f.push_back(str_field("dataset", "name", d.name));
    f.push_back(str_field("dataset", "path", d.path));
    f.push_back(int_field("dataset", "resolution", d.resolution));
    f.push_back(int_field("dataset", "channels", d.channels));
    f.push_back(bool_field("dataset", "conditional", d.conditional));
    f.push_back(int_field("dataset", "size", d.size));
    f.push_back(int_field("dataset", "max_images", d.max_images));
    f.push_back(u64_field("dataset", "seed", d.seed));

    auto& m = c.model;
    f.push_back(int_field("model", "image_channels", m.image_channels));
    f.push_back(int_field("model", "resolution", m.resolution));
    f.push_back(int_field("model", "channels", m.channels));
    f.push_back(int_field("model", "time_dim", m.time_dim));
    f.push_back(int_field("model", "num_classes", m.num_classes));
    f.push_back({"model", "prediction", [&m] { return std::string(m.prediction == Prediction::v ? "v" : "x"); },
                 [&m](const std::string& s) {
                     if (s != "v" && s != "x") throw BadValue{"'" + s + "' is not a prediction mode (v/x)"};
                     m.prediction = s == "v" ? Prediction::v : Prediction::x;
                 }});

    auto& k = c.classifier;
    auto& kt = c.classifier_train;
    f.push_back(int_field("classifier", "image_channels", k.image_channels));
    f.push_back(int_field("classifier", "resolution", k.resolution));
    f.push_back(int_field("classifier", "width", k.width));
    f.push_back(int_field("classifier", "num_classes", k.num_classes));
    f.push_back(int_field("classifier", "iterations", kt.iterations));
    f.push_back(int_field("classifier", "batch_size", kt.batch_size));
    f.push_back(dbl_field("classifier", "lr", kt.lr));
    f.push_back(dbl_field("classifier", "holdout", kt.holdout));
    f.push_back(u64_field("classifier", "seed", kt.seed));

    auto& b = c.base;
    f.push_back(int_field("base", "steps", c.base_steps));
    f.push_back(int_field("base", "iterations", b.iterations));
    f.push_back(int_field("base", "batch_size", b.batch_size));
    f.push_back(dbl_field("base", "lr", b.lr));
    f.push_back(int_field("base", "warmup", b.warmup));
    f.push_back(lr_field("base", b.lr_schedule));
    f.push_back(dbl_field("base", "ema_decay", b.ema_decay));
    f.push_back(dbl_field("base", "clip", b.clip));
    f.push_back({"base", "weighting", [&b] { return omega_name(b.weighting); },
                 [&b](const std::string& s) { b.weighting = parse_omega(s); }});
    f.push_back(u64_field("base", "seed", b.seed));

    auto& x = c.distill;
    f.push_back({"distill", "method", [&x] { return to_string(x.method); },
                 [&x](const std::string& s) {
                     try {
                         x.method = parse_method(s);
                     } catch (const InvalidArgument&) {
                         throw BadValue{"'" + s + "' is not a method (pd/cfd/rdd)"};
                     }
                     x.losses = method_toggles(x.method);
                 }});
    f.push_back(bool_field("distill", "loss_pixel", x.losses.pixel));
    f.push_back(bool_field("distill", "loss_cfd", x.losses.cfd));
    f.push_back(bool_field("distill", "loss_is_p2p", x.losses.is_p2p));
    f.push_back(bool_field("distill", "loss_ii_p2p", x.losses.ii_p2p));
    f.push_back(bool_field("distill", "loss_m_p2p", x.losses.m_p2p));
    f.push_back(int_field("distill", "start_steps", c.start_steps));
    f.push_back(int_field("distill", "end_steps", c.end_steps));
    f.push_back(dbl_field("distill", "alpha", x.weights.alpha));
    f.push_back(dbl_field("distill", "beta", x.weights.beta));
    f.push_back(dbl_field("distill", "tau_cfd", x.weights.tau_cfd));
    f.push_back({"distill", "tau_cfd_stages",
                 [&x] {
                     std::string out;
                     for (auto it = x.tau_cfd_stages.rbegin(); it != x.tau_cfd_stages.rend(); ++it) {
                         if (!out.empty()) out += ",";
                         out += std::to_string(it->first) + ":" + fmt_double(it->second);
                     }
                     return out;
                 },
                 [&x](const std::string& s) {
                     std::map<int, double> m;
                     for (const auto& item : split(s, ',')) {
                         const auto colon = item.find(':');
                         if (colon == std::string::npos) throw BadValue{"'" + item + "' is not steps:tau"};
                         m[parse_number<int>(trim(item.substr(0, colon)))] =
                             parse_number<double>(trim(item.substr(colon + 1)));
                     }
                     x.tau_cfd_stages = std::move(m);
                 }});
    f.push_back(dbl_field("distill", "tau_isp2p", x.weights.tau_isp2p));
    f.push_back(dbl_field("distill", "tau_mp2p", x.weights.tau_mp2p));
    f.push_back({"distill", "omega", [&x] { return omega_name(x.weights.omega_clip); },
                 [&x](const std::string& s) { x.weights.omega_clip = parse_omega(s); }});
    f.push_back(int_field("distill", "queue_capacity", x.queue_capacity));
    f.push_back(int_field("distill", "queue_sample", x.queue_sample));
    f.push_back(int_field("distill", "queue_push", x.queue_push));
    f.push_back(int_field("distill", "batch_size", x.batch_size));
    f.push_back(dbl_field("distill", "lr", x.lr));
    f.push_back(lr_field("distill", x.lr_schedule));
    f.push_back(int_field("distill", "warmup", x.warmup));
    f.push_back(int_field("distill", "iterations", x.iterations));
    f.push_back(int_field("distill", "iterations_final", x.iterations_final));
    f.push_back(dbl_field("distill", "ema_decay", x.ema_decay));
    f.push_back(dbl_field("distill", "clip", x.clip));
    f.push_back(bool_field("distill", "export_ema", x.export_ema));
    f.push_back(bool_field("distill", "reset_queue", x.reset_queue));
    f.push_back(u64_field("distill", "seed", x.seed));

    auto& e = c.eval;
    f.push_back(int_field("eval", "n_samples", e.n_samples));
    f.push_back({"eval", "steps",
                 [&e] {
                     std::string out;
                     for (int s : e.steps) out += (out.empty() ? "" : ",") + std::to_string(s);
                     return out;
                 },
                 [&e](const std::string& s) {
                     e.steps.clear();
                     for (const auto& item : split(s, ',')) e.steps.push_back(parse_number<int>(item));
                 }});
    f.push_back(int_field("eval", "splits", e.splits));
    f.push_back(u64_field("eval", "seed", e.seed));

    auto& r = c.run;
    f.push_back(str_field("run", "output_dir", r.output_dir));
    f.push_back(str_field("run", "backend", r.backend));
    f.push_back(int_field("run", "threads", r.threads));
    return f;
}

/// Line of `key` inside `[section]`, or 0 when not found.
int find_line(std::string_view text, const std::string& section, const std::string& key) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::string current;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
            current = trim(t.substr(1, t.size() - 2));
        } else if (current == section && !key.empty()) {
            const auto eq = t.find('=');
            if (eq != std::string::npos && trim(t.substr(0, eq)) == key) return n;
        } else if (key.empty() && current == section) {
            return n;
        }
    }
    return 0;
}

} // namespace

void ExperimentConfig::validate() const {
    auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
    RDD_REQUIRE(dataset.resolution == model.resolution && dataset.resolution == classifier.resolution,
                "dataset, model and classifier resolutions must agree");
    RDD_REQUIRE(dataset.channels == model.image_channels && dataset.channels == classifier.image_channels,
                "dataset, model and classifier channel counts must agree");
    RDD_REQUIRE(pow2(base_steps) && pow2(start_steps) && pow2(end_steps), "step counts must be powers of two");
    RDD_REQUIRE(start_steps <= base_steps && end_steps <= start_steps, "need base >= start >= end steps");
    RDD_REQUIRE(!dataset.conditional || model.num_classes > 0, "conditional datasets need model.num_classes > 0");
    RDD_REQUIRE(run.backend == "parallel" || run.backend == "serial", "backend must be parallel or serial");
    RDD_REQUIRE(eval.n_samples >= 2 && eval.splits >= 1, "eval needs at least two samples and one split");
    for (int s : eval.steps) RDD_REQUIRE(s >= 1, "eval step counts must be positive");
    base.validate();
    classifier_train.validate();
    distill.validate();
}

std::string to_ini(const ExperimentConfig& cfg) {
    ExperimentConfig copy = cfg;
    std::string out;
    std::string section;
    for (const Field& f : fields(copy)) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

ExperimentConfig parse_ini(std::string_view text, const std::string& source) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw FormatError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }

    ExperimentConfig cfg;
    std::vector<Field> table = fields(cfg);
    std::set<std::string> sections;
    for (const Field& f : table) sections.insert(f.section);

    auto apply = [&](const std::string& sec, const std::string& key, const std::string& value) {
        for (Field& f : table) {
            if (f.section == sec && f.key == key) {
                try {
                    f.set(trim(value));
                } catch (const BadValue& b) {
                    throw FormatError(source + ":" + std::to_string(find_line(text, sec, key)) + ": [" + sec +
                                      "] " + key + ": " + b.why);
                }
                return;
            }
        }
        throw FormatError(source + ":" + std::to_string(find_line(text, sec, key)) + ": unknown key '" + key +
                          "' in section [" + sec + "]");
    };

    for (const auto& [sec, body] : tree) {
        if (!sections.count(sec)) {
            const int line = find_line(text, sec, "");
            if (body.empty()) {
                throw FormatError(source + ":" + std::to_string(line) + ": key '" + sec + "' outside any section");
            }
            throw FormatError(source + ":" + std::to_string(line) + ": unknown section [" + sec + "]");
        }
    }
    // The method presets the loss toggles, so it is applied before any explicit toggle.
    for (const auto& [sec, body] : tree) {
        if (sec == "distill" && body.count("method")) apply(sec, "method", body.get<std::string>("method"));
    }
    for (const auto& [sec, body] : tree) {
        for (const auto& [key, value] : body) {
            if (sec == "distill" && key == "method") continue;
            apply(sec, key, value.data());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ini(ss.str(), path.string());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << to_ini(cfg);
}

std::string content_hash(std::string_view content) {
    const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw Error("cannot allocate a hash context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("SHA-1 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

} // namespace rdd

namespace rdd {

Dataset load_dataset(const DatasetSpec& spec) {
    Dataset ds;
    if (spec.name == "toy") {
        ds = make_toy_dataset(spec.size, spec.resolution, spec.seed);
    } else if (spec.name == "cifar10") {
        ds = load_cifar10(spec.path, spec.max_images);
    } else if (spec.name == "array") {
        ds = load_array_dataset(spec.path);
    } else if (spec.name == "images") {
        ds = load_image_directory(spec.path);
    } else {
        throw InvalidArgument("unknown dataset '" + spec.name + "' (expected toy, cifar10, array or images)");
    }
    const Shape s = ds.item_shape();
    if (s.c != spec.channels || s.h != spec.resolution || s.w != spec.resolution) {
        throw InvalidArgument("dataset images are " + s.str() + " but the config expects " +
                              std::to_string(spec.channels) + " channels at " + std::to_string(spec.resolution) +
                              "x" + std::to_string(spec.resolution));
    }
    if (spec.max_images > 0 && ds.size() > spec.max_images) {
        std::vector<int> idx(spec.max_images);
        std::iota(idx.begin(), idx.end(), 0);
        ds = Dataset{ds.name, ds.batch(idx), ds.batch_labels(idx), ds.num_classes};
    }
    return ds;
}

} // namespace rdd
