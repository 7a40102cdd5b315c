#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sipmlab/waveform.hpp"

namespace sipmlab {

// Flat binary trace format, one record after another:
//   u64 rate in Hz, u8 bit depth, u32 sample count, then i16 sample codes.
// All little-endian.

inline void write_trace(std::ostream& os, const TraceRecord& rec) {
  const auto rate = static_cast<std::uint64_t>(rec.rate_hz);
  const auto bits = static_cast<std::uint8_t>(rec.bits);
  const auto count = static_cast<std::uint32_t>(rec.samples.size());
  os.write(reinterpret_cast<const char*>(&rate), sizeof(rate));
  os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  os.write(reinterpret_cast<const char*>(rec.samples.data()),
           static_cast<std::streamsize>(count * sizeof(std::int16_t)));
}

inline void write_traces(const std::string& path, const std::vector<TraceRecord>& traces) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_traces: cannot open " + path);
  for (const auto& t : traces) write_trace(os, t);
}

/// Read records until EOF. Imported traces carry lsb = 1 (code units); any
/// downstream charge scale is recovered from the spectrum itself.
inline std::vector<TraceRecord> read_traces(std::istream& is) {
  std::vector<TraceRecord> out;
  for (;;) {
    std::uint64_t rate = 0;
    std::uint8_t bits = 0;
    std::uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&rate), sizeof(rate));
    if (is.gcount() == 0) break;
    if (is.gcount() != sizeof(rate)) throw std::runtime_error("read_traces: truncated header");
    is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!is) throw std::runtime_error("read_traces: truncated header");
    if (rate == 0) throw std::runtime_error("read_traces: zero sampling rate");
    TraceRecord rec;
    rec.rate_hz = static_cast<double>(rate);
    rec.bits = bits;
    rec.lsb = 1.0;
    rec.samples.resize(count);
    is.read(reinterpret_cast<char*>(rec.samples.data()),
            static_cast<std::streamsize>(count * sizeof(std::int16_t)));
    if (is.gcount() != static_cast<std::streamsize>(count * sizeof(std::int16_t)))
      throw std::runtime_error("read_traces: truncated samples");
    rec.window_ns = static_cast<double>(count) * rec.dt_ns();
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<TraceRecord> read_traces(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_traces: cannot open " + path);
  return read_traces(is);
}

/// CSV export for small cases: one row per sample, one column per trace.
inline void write_traces_csv(std::ostream& os, const std::vector<TraceRecord>& traces) {
  if (traces.empty()) return;
  os << "sample";
  for (std::size_t t = 0; t < traces.size(); ++t) os << ",trace" << t;
  os << "\n";
  std::size_t rows = 0;
  for (const auto& t : traces) rows = std::max(rows, t.samples.size());
  for (std::size_t i = 0; i < rows; ++i) {
    os << i;
    for (const auto& t : traces) {
      os << ',';
      if (i < t.samples.size()) os << t.samples[i];
    }
    os << "\n";
  }
}

}  // namespace sipmlab
