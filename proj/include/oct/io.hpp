#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oct/types.hpp"

namespace oct::io {

namespace fs = std::filesystem;

// 8-bit grayscale PNG, non-interlaced. Masks use values {0, 255} on disk,
// layer maps raw label values 0..11.
void write_png_gray8(const fs::path& path, const ImageU8& img);
ImageU8 read_png_gray8(const fs::path& path);

inline void write_png(const fs::path& path, const ImageF& img) { write_png_gray8(path, to_u8(img)); }
inline ImageF read_png_float(const fs::path& path) { return to_float(read_png_gray8(path)); }

void write_mask_png(const fs::path& path, const RegionMask& m);
RegionMask read_mask_png(const fs::path& path);
void write_layers_png(const fs::path& path, const LayerMap& m);
LayerMap read_layers_png(const fs::path& path);

// Volume format: little-endian u8 raw stream in (frame, depth, A-line) order
// plus a JSON sidecar {frames, depth, alines, axial_pitch_um,
// lateral_pitch_um, frame_pitch_um}. Sidecar path = raw path + ".json".
fs::path sidecar_path(const fs::path& raw_path);
OctVolume load_volume(const fs::path& raw_path);
void save_volume(const fs::path& raw_path, const OctVolume& vol);

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& content);

// Atomic write via temp file + rename.
void write_file_atomic(const fs::path& path, const void* data, size_t n);

uint64_t hash_file(const fs::path& path);

// File-access audit used by the pipeline sandbox test. When enabled, every
// open performed through this module is recorded.
void audit_enable(bool on);
void audit_clear();
std::vector<fs::path> audit_log();

}  // namespace oct::io
