#include "oct/io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <mutex>

#include "oct/common.hpp"
#include "oct/rng.hpp"

#include "json.hpp"

namespace oct::io {

namespace {

std::mutex g_audit_mutex;
bool g_audit_on = false;
std::vector<fs::path> g_audit;

void audit(const fs::path& p) {
    if (!g_audit_on) return;
    std::lock_guard<std::mutex> lock(g_audit_mutex);
    g_audit.push_back(fs::absolute(p));
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32_be(out, crc);
}

std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<uint8_t> out(bound);
    const int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6);
    OCT_REQUIRE(rc == Z_OK, "zlib deflate failed");
    out.resize(bound);
    return out;
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf n = static_cast<uLongf>(expected);
    const int rc = uncompress(out.data(), &n, in.data(), static_cast<uLong>(in.size()));
    OCT_REQUIRE(rc == Z_OK && n == expected, "zlib inflate failed or size mismatch");
    return out;
}

constexpr uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void audit_enable(bool on) {
    std::lock_guard<std::mutex> lock(g_audit_mutex);
    g_audit_on = on;
}

void audit_clear() {
    std::lock_guard<std::mutex> lock(g_audit_mutex);
    g_audit.clear();
}

std::vector<fs::path> audit_log() {
    std::lock_guard<std::mutex> lock(g_audit_mutex);
    return g_audit;
}

void write_file_atomic(const fs::path& path, const void* data, size_t n) {
    audit(path);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        OCT_REQUIRE(f.good(), "cannot open for write: " + tmp.string());
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        OCT_REQUIRE(f.good(), "write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_png_gray8(const fs::path& path, const ImageU8& img) {
    OCT_REQUIRE(img.height() > 0 && img.width() > 0, "cannot write empty image");
    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.width()));
    put_u32_be(ihdr, static_cast<uint32_t>(img.height()));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace

    // filter byte 0 (None) per scanline
    std::vector<uint8_t> scan;
    scan.reserve(static_cast<size_t>(img.height()) * (img.width() + 1));
    for (int r = 0; r < img.height(); ++r) {
        scan.push_back(0);
        scan.insert(scan.end(), img.data() + static_cast<size_t>(r) * img.width(),
                    img.data() + static_cast<size_t>(r + 1) * img.width());
    }

    std::vector<uint8_t> out(kPngSig, kPngSig + 8);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zlib_deflate(scan));
    append_chunk(out, "IEND", {});
    write_file_atomic(path, out.data(), out.size());
}

ImageU8 read_png_gray8(const fs::path& path) {
    audit(path);
    std::ifstream f(path, std::ios::binary);
    OCT_REQUIRE(f.good(), "cannot open PNG: " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    OCT_REQUIRE(buf.size() > 8 && std::memcmp(buf.data(), kPngSig, 8) == 0,
                "not a PNG file: " + path.string());

    uint32_t w = 0, h = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool have_ihdr = false;
    while (pos + 8 <= buf.size()) {
        const uint32_t len = get_u32_be(&buf[pos]);
        OCT_REQUIRE(pos + 12 + len <= buf.size(), "truncated PNG chunk: " + path.string());
        const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
        const uint8_t* data = &buf[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            OCT_REQUIRE(len == 13, "bad IHDR");
            w = get_u32_be(data);
            h = get_u32_be(data + 4);
            OCT_REQUIRE(data[8] == 8, "unsupported PNG bit depth (want 8)");
            OCT_REQUIRE(data[9] == 0, "unsupported PNG color type (want grayscale)");
            OCT_REQUIRE(data[12] == 0, "interlaced PNG not supported");
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    OCT_REQUIRE(have_ihdr && w > 0 && h > 0, "PNG missing IHDR: " + path.string());

    const size_t stride = w + 1;
    std::vector<uint8_t> scan = zlib_inflate(idat, stride * h);

    ImageU8 img(static_cast<int>(h), static_cast<int>(w));
    std::vector<uint8_t> prev(w, 0);
    for (uint32_t r = 0; r < h; ++r) {
        const uint8_t filter = scan[r * stride];
        uint8_t* row = img.data() + static_cast<size_t>(r) * w;
        const uint8_t* src = &scan[r * stride + 1];
        for (uint32_t c = 0; c < w; ++c) {
            const int left = c > 0 ? row[c - 1] : 0;
            const int up = prev[c];
            const int ul = c > 0 ? prev[c - 1] : 0;
            int v = src[c];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: OCT_REQUIRE(false, "bad PNG filter type");
            }
            row[c] = static_cast<uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), row, w);
    }
    return img;
}

void write_mask_png(const fs::path& path, const RegionMask& m) {
    write_png_gray8(path, map_image<uint8_t, uint8_t>(m.mask, [](uint8_t v) {
        return static_cast<uint8_t>(v ? 255 : 0);
    }));
}

RegionMask read_mask_png(const fs::path& path) {
    RegionMask m;
    m.mask = map_image<uint8_t, uint8_t>(read_png_gray8(path), [](uint8_t v) {
        return static_cast<uint8_t>(v >= 128 ? 1 : 0);
    });
    return m;
}

void write_layers_png(const fs::path& path, const LayerMap& m) {
    write_png_gray8(path, m.labels);
}

LayerMap read_layers_png(const fs::path& path) {
    LayerMap m;
    m.labels = read_png_gray8(path);
    for (uint8_t v : m.labels.raw())
        OCT_REQUIRE(v < kNumLayers, "layer map with label outside 0..11: " + path.string());
    return m;
}

fs::path sidecar_path(const fs::path& raw_path) { return raw_path.string() + ".json"; }

OctVolume load_volume(const fs::path& raw_path) {
    const fs::path meta_path = sidecar_path(raw_path);
    OCT_REQUIRE(fs::exists(meta_path), "missing volume sidecar: " + meta_path.string());
    audit(meta_path);

    nlohmann::json meta;
    {
        std::ifstream f(meta_path);
        OCT_REQUIRE(f.good(), "cannot open sidecar: " + meta_path.string());
        try {
            f >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad sidecar JSON: " + std::string(e.what()));
        }
    }
    OctVolume vol;
    try {
        vol.frames = meta.at("frames").get<int>();
        vol.depth = meta.at("depth").get<int>();
        vol.alines = meta.at("alines").get<int>();
        vol.axial_pitch_um = meta.at("axial_pitch_um").get<float>();
        vol.lateral_pitch_um = meta.at("lateral_pitch_um").get<float>();
        vol.frame_pitch_um = meta.at("frame_pitch_um").get<float>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("sidecar missing field: " + std::string(e.what()));
    }
    OCT_REQUIRE(vol.frames >= 1 && vol.depth >= 1 && vol.alines >= 1,
                "sidecar dimensions must all be >= 1");
    OCT_REQUIRE(vol.axial_pitch_um > 0 && vol.lateral_pitch_um > 0 && vol.frame_pitch_um > 0 &&
                    std::isfinite(vol.axial_pitch_um) && std::isfinite(vol.lateral_pitch_um) &&
                    std::isfinite(vol.frame_pitch_um),
                "sidecar pitches must be strictly positive and finite");

    audit(raw_path);
    std::ifstream f(raw_path, std::ios::binary);
    OCT_REQUIRE(f.good(), "cannot open volume: " + raw_path.string());
    f.seekg(0, std::ios::end);
    const auto file_size = static_cast<size_t>(f.tellg());
    f.seekg(0);
    const size_t expected =
        static_cast<size_t>(vol.frames) * static_cast<size_t>(vol.depth) * vol.alines;
    OCT_REQUIRE(file_size == expected,
                "volume size mismatch: sidecar says " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(file_size));

    std::vector<uint8_t> raw(expected);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expected));
    OCT_REQUIRE(f.good(), "short read: " + raw_path.string());

    vol.voxels.resize(expected);
    for (size_t i = 0; i < expected; ++i) vol.voxels[i] = static_cast<float>(raw[i]) / 255.0f;
    return vol;
}

void save_volume(const fs::path& raw_path, const OctVolume& vol) {
    std::vector<uint8_t> raw(vol.voxels.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const float c = std::clamp(vol.voxels[i], 0.0f, 1.0f);
        raw[i] = static_cast<uint8_t>(c * 255.0f + 0.5f);
    }
    write_file_atomic(raw_path, raw.data(), raw.size());

    nlohmann::json meta{{"frames", vol.frames},
                        {"depth", vol.depth},
                        {"alines", vol.alines},
                        {"axial_pitch_um", vol.axial_pitch_um},
                        {"lateral_pitch_um", vol.lateral_pitch_um},
                        {"frame_pitch_um", vol.frame_pitch_um}};
    const std::string s = meta.dump(2) + "\n";
    write_file_atomic(sidecar_path(raw_path), s.data(), s.size());
}

std::string read_text_file(const fs::path& path) {
    audit(path);
    std::ifstream f(path, std::ios::binary);
    OCT_REQUIRE(f.good(), "cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& path, const std::string& content) {
    write_file_atomic(path, content.data(), content.size());
}

uint64_t hash_file(const fs::path& path) {
    const std::string s = read_text_file(path);
    return fnv1a(s.data(), s.size());
}

}  // namespace oct::io
