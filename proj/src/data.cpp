#include "rdd/data.hpp"

#include "rdd/container.hpp"
#include "rdd/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace rdd {

namespace fs = std::filesystem;

Shape Dataset::item_shape() const {
    Shape s = images.shape();
    s.n = 1;
    return s;
}

std::vector<int> Dataset::batch_labels(std::span<const int> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset make_toy_dataset(int count, int resolution, std::uint64_t seed) {
    RDD_REQUIRE(count > 0, "dataset size must be positive");
    RDD_REQUIRE(resolution >= 8, "toy images need at least 8x8 pixels");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    const int r = resolution;
    const double scale = r / 16.0;

    Dataset ds{"toy", Tensor(Shape{count, 1, r, r}, -1.0f), std::vector<int>(count), kToyClasses};
    for (int n = 0; n < count; ++n) {
        const int label = int(rng() % kToyClasses);
        ds.labels[n] = label;
        const double level = 0.5 + 0.5 * unit(rng);
        const double cy = r / 2.0 + (unit(rng) - 0.5) * 6.0 * scale;
        const double cx = r / 2.0 + (unit(rng) - 0.5) * 6.0 * scale;
        const double size = (3.0 + 2.0 * unit(rng)) * scale;
        float* img = ds.images.item(n);
        for (int y = 0; y < r; ++y) {
            for (int x = 0; x < r; ++x) {
                const double dy = y + 0.5 - cy;
                const double dx = x + 0.5 - cx;
                bool on = false;
                switch (label) {
                case 0: on = dx * dx + dy * dy <= size * size; break;
                case 1: on = std::abs(dy) <= 0.4 * size && std::abs(dx) <= 1.8 * size; break;
                case 2: on = std::abs(dx) <= 0.4 * size && std::abs(dy) <= 1.8 * size; break;
                default: {
                    const double m = std::max(std::abs(dx), std::abs(dy));
                    on = m <= size && m >= size - 1.5 * scale;
                }
                }
                const double v = (on ? level : -1.0) + noise(rng);
                img[y * r + x] = float(std::clamp(v, -1.0, 1.0));
            }
        }
    }
    return ds;
}

Dataset load_cifar10(const fs::path& path, int max_images) {
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            const auto name = e.path().filename().string();
            if (name.starts_with("data_batch_") && name.ends_with(".bin")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    if (files.empty()) throw Error("no CIFAR-10 batch files under " + path.string());

    constexpr int kRecord = 1 + 3 * 32 * 32;
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw Error("cannot open " + f.string());
        std::vector<unsigned char> rec(kRecord);
        while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
            if (rec[0] > 9) throw FormatError(f.string() + ": label byte out of range");
            labels.push_back(rec[0]);
            for (int i = 1; i < kRecord; ++i) pixels.push_back(float(rec[i]) / 127.5f - 1.0f);
            if (max_images > 0 && int(labels.size()) >= max_images) break;
        }
        if (in.gcount() != 0 && in.gcount() != kRecord) throw FormatError(f.string() + ": truncated record");
        if (max_images > 0 && int(labels.size()) >= max_images) break;
    }
    const int n = int(labels.size());
    return Dataset{"cifar10", Tensor(Shape{n, 3, 32, 32}, std::move(pixels)), std::move(labels), 10};
}

void save_array_dataset(const fs::path& path, const Dataset& ds) {
    Container c("dataset");
    c.meta()["name"] = ds.name;
    c.meta()["num_classes"] = ds.num_classes;
    const Shape s = ds.images.shape();
    c.put("images", ds.images.span(), {s.n, s.c, s.h, s.w});
    std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
    c.put("labels", std::span<const std::int32_t>(labels), {s.n});
    c.save(path);
}

Dataset load_array_dataset(const fs::path& path) {
    const Container c = Container::load(path, "dataset");
    const Blob& b = c.blob("images");
    if (b.shape.size() != 4) throw FormatError(path.string() + ": images must be 4-D");
    const Shape s{int(b.shape[0]), int(b.shape[1]), int(b.shape[2]), int(b.shape[3])};
    const auto labels = c.get_i32("labels");
    if (int(labels.size()) != s.n) throw FormatError(path.string() + ": label count does not match images");
    Dataset ds{c.meta().value("name", std::string("array")), Tensor(s, c.get_f32("images")),
               std::vector<int>(labels.begin(), labels.end()), c.meta().value("num_classes", 0)};
    for (int l : ds.labels) {
        if (l < 0 || (ds.num_classes > 0 && l >= ds.num_classes)) throw FormatError(path.string() + ": bad label");
    }
    return ds;
}

namespace {

/// Skips whitespace and '#' comments in a PNM header and reads one integer.
int pnm_int(std::istream& in, const fs::path& path) {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        c = in.peek();
    }
    int v = 0;
    if (!(in >> v)) throw FormatError(path.string() + ": malformed header");
    return v;
}

} // namespace

Tensor read_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P6") throw FormatError(path.string() + ": only binary PGM/PPM supported");
    const int channels = magic == "P5" ? 1 : 3;
    const int w = pnm_int(in, path);
    const int h = pnm_int(in, path);
    const int maxval = pnm_int(in, path);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path.string() + ": unsupported geometry");
    in.get();
    std::vector<unsigned char> raw(std::size_t(w) * h * channels);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()))) {
        throw FormatError(path.string() + ": truncated pixel data");
    }
    Tensor img(Shape{1, channels, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                const double v = raw[(std::size_t(y) * w + x) * channels + c];
                img.at(0, c, y, x) = float(2.0 * v / maxval - 1.0);
            }
        }
    }
    return img;
}

void write_pnm(const fs::path& path, const Tensor& image) {
    const Shape s = image.shape();
    RDD_REQUIRE(s.n == 1 && (s.c == 1 || s.c == 3), "expected one 1- or 3-channel image, got " + s.str());
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << (s.c == 1 ? "P5" : "P6") << "\n" << s.w << " " << s.h << "\n255\n";
    std::vector<unsigned char> raw(std::size_t(s.h) * s.w * s.c);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            for (int c = 0; c < s.c; ++c) {
                const double v = std::clamp((double(image.at(0, c, y, x)) + 1.0) * 127.5, 0.0, 255.0);
                raw[(std::size_t(y) * s.w + x) * s.c + c] = static_cast<unsigned char>(std::lround(v));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
}

Dataset load_image_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
    auto is_image = [](const fs::path& p) { return p.extension() == ".pgm" || p.extension() == ".ppm"; };
    std::vector<std::pair<fs::path, int>> files;
    std::set<int> classes;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) {
            const std::string name = e.path().filename().string();
            int label = 0;
            try {
                std::size_t used = 0;
                label = std::stoi(name, &used);
                if (used != name.size() || label < 0) throw std::invalid_argument(name);
            } catch (const std::exception&) {
                throw FormatError(e.path().string() + ": class directories must be named by non-negative integers");
            }
            classes.insert(label);
            for (const auto& f : fs::directory_iterator(e.path())) {
                if (is_image(f.path())) files.emplace_back(f.path(), label);
            }
        } else if (is_image(e.path())) {
            files.emplace_back(e.path(), 0);
            classes.insert(0);
        }
    }
    if (files.empty()) throw Error("no PGM/PPM images under " + dir.string());
    std::sort(files.begin(), files.end());

    const Tensor first = read_pnm(files.front().first);
    Shape s = first.shape();
    s.n = int(files.size());
    Dataset ds{dir.filename().string(), Tensor(s), {}, *classes.rbegin() + 1};
    for (std::size_t i = 0; i < files.size(); ++i) {
        const Tensor img = i == 0 ? first : read_pnm(files[i].first);
        if (img.shape().c != s.c || img.shape().h != s.h || img.shape().w != s.w) {
            throw FormatError(files[i].first.string() + ": image size differs from " + files.front().first.string());
        }
        std::copy(img.vec().begin(), img.vec().end(), ds.images.item(int(i)));
        ds.labels.push_back(files[i].second);
    }
    return ds;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
    RDD_REQUIRE(fraction > 0.0 && fraction < 1.0, "holdout fraction must lie in (0, 1)");
    std::vector<int> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int held = std::max(1, int(std::lround(fraction * ds.size())));
    RDD_REQUIRE(held < ds.size(), "dataset too small to split");
    const std::span<const int> test(order.data(), held);
    const std::span<const int> train(order.data() + held, order.size() - held);
    Dataset a{ds.name, ds.batch(train), ds.batch_labels(train), ds.num_classes};
    Dataset b{ds.name, ds.batch(test), ds.batch_labels(test), ds.num_classes};
    return {std::move(a), std::move(b)};
}

void write_grid(const fs::path& path, const Tensor& images, int cols) {
    const Shape s = images.shape();
    RDD_REQUIRE(s.n >= 1 && cols >= 1, "grid needs at least one image and one column");
    const int rows = (s.n + cols - 1) / cols;
    const int gw = cols * (s.w + 1) + 1;
    const int gh = rows * (s.h + 1) + 1;
    Tensor grid(Shape{1, s.c, gh, gw}, -1.0f);
    for (int n = 0; n < s.n; ++n) {
        const int oy = 1 + (n / cols) * (s.h + 1);
        const int ox = 1 + (n % cols) * (s.w + 1);
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) grid.at(0, c, oy + y, ox + x) = images.at(n, c, y, x);
            }
        }
    }
    write_pnm(path, grid);
}

} // namespace rdd
