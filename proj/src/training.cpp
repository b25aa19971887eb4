#include "oct/training.hpp"

#include <sstream>

#include "json.hpp"

namespace oct::train {

void TrainConfig::validate() const {
    OCT_REQUIRE_CFG(optimizer == "adam", "unsupported optimizer: " + optimizer);
    OCT_REQUIRE_CFG(initial_lr > 0.0, "initial_lr must be > 0");
    OCT_REQUIRE_CFG(batch_size >= 1, "batch_size must be >= 1");
    OCT_REQUIRE_CFG(lr_drop_factor > 0.0 && lr_drop_factor < 1.0, "lr_drop_factor must be in (0,1)");
    OCT_REQUIRE_CFG(max_epochs >= 1, "max_epochs must be >= 1");
    OCT_REQUIRE_CFG(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must be in [0,1)");
}

double lr_at(const TrainConfig& cfg, int epoch) {
    OCT_REQUIRE(epoch >= 0, "epoch must be >= 0");
    int drops = 0;
    for (int e : cfg.lr_drop_epochs) drops += (e <= epoch);
    return cfg.initial_lr * std::pow(cfg.lr_drop_factor, drops);
}

namespace {

// Rotation about the image center with clamped source sampling, so the
// corners are filled with edge content and label maps stay in range.
template <typename T, typename Sample>
Image<T> rotate_impl(const Image<T>& img, double degrees, Sample sample) {
    if (degrees == 0.0) return img;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
    Image<T> out(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
            const double dy = r - cy, dx = c - cx;
            const double sy = cy + (cs * dy - sn * dx);
            const double sx = cx + (sn * dy + cs * dx);
            out.at(r, c) = sample(img, sy, sx);
        }
    return out;
}

}  // namespace

ImageF rotate_bilinear(const ImageF& img, double degrees) {
    return rotate_impl<float>(img, degrees, [](const ImageF& im, double sy, double sx) {
        const double y = std::clamp(sy, 0.0, double(im.height() - 1));
        const double x = std::clamp(sx, 0.0, double(im.width() - 1));
        const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
        const int y1 = std::min(y0 + 1, im.height() - 1), x1 = std::min(x0 + 1, im.width() - 1);
        const double fy = y - y0, fx = x - x0;
        return static_cast<float>((1 - fy) * ((1 - fx) * im.at(y0, x0) + fx * im.at(y0, x1)) +
                                  fy * ((1 - fx) * im.at(y1, x0) + fx * im.at(y1, x1)));
    });
}

ImageU8 rotate_nearest(const ImageU8& img, double degrees) {
    return rotate_impl<uint8_t>(img, degrees, [](const ImageU8& im, double sy, double sx) {
        const int y = std::clamp(static_cast<int>(std::lround(sy)), 0, im.height() - 1);
        const int x = std::clamp(static_cast<int>(std::lround(sx)), 0, im.width() - 1);
        return im.at(y, x);
    });
}

TrainSample augment(const TrainSample& s, const TrainConfig& cfg, Rng& rng) {
    TrainSample out = s;
    if (cfg.aug_hflip && rng.bernoulli(0.5)) {
        out.image = hflip(out.image);
        if (out.layers) out.layers->labels = hflip(out.layers->labels);
        if (out.region) out.region->mask = hflip(out.region->mask);
    }
    if (cfg.aug_rotation_deg > 0.0) {
        const double deg = rng.uniform(-cfg.aug_rotation_deg, cfg.aug_rotation_deg);
        out.image = rotate_bilinear(out.image, deg);
        if (out.layers) out.layers->labels = rotate_nearest(out.layers->labels, deg);
        if (out.region) out.region->mask = rotate_nearest(out.region->mask, deg);
    }
    return out;
}

namespace {

constexpr char kMagic[8] = {'O', 'C', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const std::map<std::string, ag::Tensor4<T>>& state,
                     const CheckpointMeta& meta) {
    nlohmann::json table;
    table["epoch"] = meta.epoch;
    table["config"] = meta.config_echo;
    auto params = nlohmann::json::array();
    for (const auto& [name, t] : state)
        params.push_back({{"name", name},
                          {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}}});
    table["params"] = params;
    const std::string header = table.dump();

    std::string buf;
    buf.append(kMagic, 8);
    uint32_t version = kVersion, width = sizeof(T);
    buf.append(reinterpret_cast<const char*>(&version), 4);
    buf.append(reinterpret_cast<const char*>(&width), 4);
    uint64_t hlen = header.size();
    buf.append(reinterpret_cast<const char*>(&hlen), 8);
    buf.append(header);
    for (const auto& [name, t] : state)
        buf.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(T));
    io::write_file_atomic(path, buf.data(), buf.size());
}

template <typename T>
std::map<std::string, ag::Tensor4<T>> load_checkpoint(const fs::path& path, CheckpointMeta* meta) {
    const std::string buf = io::read_text_file(path);
    OCT_REQUIRE(buf.size() >= 24 && std::memcmp(buf.data(), kMagic, 8) == 0,
                "not a checkpoint file: " + path.string());
    uint32_t version = 0, width = 0;
    std::memcpy(&version, buf.data() + 8, 4);
    std::memcpy(&width, buf.data() + 12, 4);
    OCT_REQUIRE(version == kVersion, "unsupported checkpoint version");
    OCT_REQUIRE(width == sizeof(T), "checkpoint scalar width mismatch");
    uint64_t hlen = 0;
    std::memcpy(&hlen, buf.data() + 16, 8);
    OCT_REQUIRE(buf.size() >= 24 + hlen, "truncated checkpoint header");

    nlohmann::json table;
    try {
        table = nlohmann::json::parse(buf.substr(24, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header: " + std::string(e.what()));
    }
    if (meta) {
        meta->epoch = table.value("epoch", 0);
        meta->config_echo = table.value("config", std::string{});
    }

    std::map<std::string, ag::Tensor4<T>> out;
    size_t offset = 24 + hlen;
    for (const auto& p : table.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const auto sh = p.at("shape");
        ag::Shape4 shape{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>(), sh[3].get<int>()};
        ag::Tensor4<T> t(shape);
        const size_t bytes = t.v.size() * sizeof(T);
        OCT_REQUIRE(offset + bytes <= buf.size(), "truncated checkpoint data");
        std::memcpy(t.v.data(), buf.data() + offset, bytes);
        offset += bytes;
        out.emplace(name, std::move(t));
    }
    return out;
}

template void save_checkpoint<float>(const fs::path&, const std::map<std::string, ag::Tensor4<float>>&,
                                     const CheckpointMeta&);
template void save_checkpoint<double>(const fs::path&,
                                      const std::map<std::string, ag::Tensor4<double>>&,
                                      const CheckpointMeta&);
template std::map<std::string, ag::Tensor4<float>> load_checkpoint<float>(const fs::path&,
                                                                          CheckpointMeta*);
template std::map<std::string, ag::Tensor4<double>> load_checkpoint<double>(const fs::path&,
                                                                            CheckpointMeta*);

void write_metric_csv(const fs::path& path, const std::vector<EpochRecord>& log,
                      const std::string& val_name) {
    std::ostringstream csv;
    csv << "epoch,lr";
    if (!log.empty())
        for (const auto& [name, v] : log.front().mean_parts) csv << "," << name;
    csv << "," << val_name << "\n";
    for (const auto& rec : log) {
        csv << rec.epoch << "," << rec.lr;
        for (const auto& [name, v] : rec.mean_parts) csv << "," << v;
        csv << "," << rec.val_metric << "\n";
    }
    io::write_text_file(path, csv.str());
}

}  // namespace oct::train
