// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ssvod {

/// Interleaved RGB frame, row-major, channel values in [0,1].
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int ch) { return data_[index(x, y, ch)]; }
  float at(int x, int y, int ch) const { return data_[index(x, y, ch)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const Frame&) const = default;

 private:
  std::size_t index(int x, int y, int ch) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(ch);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Binary P6 encoding with 8-bit channels (values rounded from [0,1]).
std::vector<std::uint8_t> encode_ppm(const Frame& f);
Frame decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const Frame& f);
Frame read_ppm(const std::filesystem::path& path);

/// Rounds every channel to the nearest 8-bit level, as a P6 round trip would.
void quantize_8bit(Frame& f);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace ssvod
