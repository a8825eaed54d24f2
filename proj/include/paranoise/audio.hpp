// 16 kHz mono PCM wav reading/writing and the waveform type.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace paranoise {

struct Waveform {
  std::vector<double> samples;  // amplitude in [-1, 1]
  int sample_rate_hz = 16000;
  std::string source_id;

  size_t duration_samples() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

namespace wav {

struct Header {
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  int format = 0;  // 1 = PCM, 3 = IEEE float
};

inline uint32_t read_u32(std::istream& s) {
  unsigned char b[4];
  s.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}
inline uint16_t read_u16(std::istream& s) {
  unsigned char b[2];
  s.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace wav

// Reads 16-bit PCM or 32-bit float mono wav. Anything else is an error;
// resampling is a preprocessing step, not handled here.
inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open wav file: " + path);
  char tag[4];
  f.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
  wav::read_u32(f);
  f.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);

  wav::Header h;
  std::vector<char> payload;
  while (f.read(tag, 4)) {
    uint32_t sz = wav::read_u32(f);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      h.format = wav::read_u16(f);
      h.channels = wav::read_u16(f);
      h.sample_rate = static_cast<int>(wav::read_u32(f));
      wav::read_u32(f);
      wav::read_u16(f);
      h.bits = wav::read_u16(f);
      if (sz > 16) f.seekg(sz - 16, std::ios::cur);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(sz);
      f.read(payload.data(), sz);
      break;
    } else {
      f.seekg(sz + (sz & 1), std::ios::cur);
    }
  }
  if (h.channels != 1)
    throw std::runtime_error(path + ": expected mono, got " + std::to_string(h.channels) +
                             " channels");
  if (h.sample_rate != 16000)
    throw std::runtime_error(path + ": expected 16 kHz, got " +
                             std::to_string(h.sample_rate) + " Hz (resample first)");

  Waveform w;
  w.source_id = path;
  if (h.format == 1 && h.bits == 16) {
    size_t n = payload.size() / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t v;
      std::memcpy(&v, &payload[2 * i], 2);
      w.samples[i] = v / 32768.0;
    }
  } else if (h.format == 3 && h.bits == 32) {
    size_t n = payload.size() / 4;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, &payload[4 * i], 4);
      w.samples[i] = v;
    }
  } else {
    throw std::runtime_error(path + ": unsupported wav encoding (need 16-bit PCM or f32)");
  }
  return w;
}

inline void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav file: " + path);
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {char(v), char(v >> 8), char(v >> 16), char(v >> 24)};
    f.write(b, 4);
  };
  auto put_u16 = [&](uint16_t v) {
    char b[2] = {char(v), char(v >> 8)};
    f.write(b, 2);
  };
  uint32_t data_sz = static_cast<uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(36 + data_sz);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(1);
  put_u16(1);
  put_u32(static_cast<uint32_t>(w.sample_rate_hz));
  put_u32(static_cast<uint32_t>(w.sample_rate_hz * 2));
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_sz);
  for (double s : w.samples) {
    double c = std::max(-1.0, std::min(1.0, s));
    int16_t v = static_cast<int16_t>(std::lround(c * 32767.0));
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    f.write(b, 2);
  }
}

}  // namespace paranoise
