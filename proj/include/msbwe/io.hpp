#pragma once

#include <functional>
#include <iosfwd>
#include <string>

#include "msbwe/dsp.hpp"

namespace msbwe::io {

enum class WavEncoding { Pcm16, Float32 };

// Mono RIFF/WAVE, PCM 16-bit or IEEE float 32-bit (plain or extensible header).
// Malformed files raise DataError naming the byte offset of the problem.
dsp::Waveform read_wav(const std::string& path);
dsp::Waveform parse_wav(const std::string& bytes, const std::string& origin = "<memory>");

void write_wav(const std::string& path, const dsp::Waveform& wav, WavEncoding enc = WavEncoding::Float32);
std::string encode_wav(const dsp::Waveform& wav, WavEncoding enc = WavEncoding::Float32);

// Writes through `path.tmp.<pid>` and renames into place, so a failed writer
// never leaves a partial file behind.
void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& writer);

std::string read_file(const std::string& path);

}  // namespace msbwe::io
