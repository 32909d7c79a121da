#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "pkinet/tensor.hpp"

namespace pkinet {
struct ModelConfig;
}

namespace pkinet::io {

// "PKIT" tensor container. Little-endian throughout:
//   magic   4 bytes  "PKIT"
//   version u32      (currently 1)
//   dtype   u32      0 = f32, 1 = f64
//   rank    u32      1..4
//   dims    rank x u64
//   payload row-major scalars, product(dims) * scalar width bytes
inline constexpr std::uint32_t kContainerVersion = 1;

struct RawArray {
    DType dtype = DType::F64;
    std::vector<std::uint64_t> dims;
    std::vector<std::byte> payload; // little-endian scalars

    std::uint64_t count() const;
};

void write_raw(std::ostream& sink, const RawArray& a);
RawArray read_raw(std::istream& source);

// Tensor-level wrappers (rank 4 on write; rank 1..4 accepted on read, with
// missing leading dims treated as 1).
void write_tensor(std::ostream& sink, const Tensor& t);
Tensor read_tensor(std::istream& source);

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

// Binary PPM (P6) -> (1,3,H,W) and PGM (P5) -> (1,1,H,W), 8-bit maxval 255
// only, values scaled to [0,1].
Tensor load_image(const std::string& path);
Tensor read_image(std::istream& source, const std::string& origin);

// Writes (1,3,H,W) values in [0,1] as binary P6 (values clamped, rounded to
// nearest byte).
void write_ppm(std::ostream& sink, const Tensor& t);

// Model configuration file: one `key = value` pair per line, '#' comments.
// Documented keys: variant, stem_channels, stage_channels, blocks,
// pki_kernels, dilations, caa_schedule, caa_stage_mask, ffn_ratio, csp.
// Unknown keys are rejected. Defaults are the PKINet-S preset.
ModelConfig load_config(const std::string& path);
ModelConfig parse_config(std::istream& source, const std::string& origin);

// CSV of detection records with header `category,score,area`.
struct DetectionRecord;
std::vector<DetectionRecord> load_records_csv(const std::string& path);

} // namespace pkinet::io
