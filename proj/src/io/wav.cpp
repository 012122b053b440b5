#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msbwe/error.hpp"
#include "msbwe/io.hpp"

static_assert(std::endian::native == std::endian::little, "WAV and checkpoint code assumes a little-endian host");

namespace msbwe::io {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class Reader {
public:
    Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    [[noreturn]] void fail(std::size_t offset, const std::string& msg) const {
        throw DataError(origin_ + ": " + msg + " at offset " + std::to_string(offset));
    }

    void need(std::size_t offset, std::size_t n, const char* what) const {
        if (offset + n > bytes_.size()) fail(offset, std::string("truncated ") + what);
    }

    template <typename U>
    U get(std::size_t offset, const char* what) const {
        need(offset, sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + offset, sizeof(U));
        return v;
    }

    std::string tag(std::size_t offset, const char* what) const {
        need(offset, 4, what);
        return bytes_.substr(offset, 4);
    }

    std::size_t size() const { return bytes_.size(); }
    const char* at(std::size_t offset) const { return bytes_.data() + offset; }

private:
    const std::string& bytes_;
    std::string origin_;
};

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

}  // namespace

dsp::Waveform parse_wav(const std::string& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    if (r.tag(0, "RIFF header") != "RIFF") r.fail(0, "missing RIFF tag");
    if (r.tag(8, "RIFF header") != "WAVE") r.fail(8, "missing WAVE tag");

    std::size_t pos = 12;
    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    while (pos + 8 <= r.size()) {
        const std::string id = r.tag(pos, "chunk header");
        const auto len = r.get<std::uint32_t>(pos + 4, "chunk size");
        const std::size_t body = pos + 8;
        if (id == "fmt ") {
            if (len < 16) r.fail(pos + 4, "fmt chunk shorter than 16 bytes");
            r.need(body, len, "fmt chunk");
            format = r.get<std::uint16_t>(body, "format tag");
            channels = r.get<std::uint16_t>(body + 2, "channel count");
            rate = r.get<std::uint32_t>(body + 4, "sample rate");
            bits = r.get<std::uint16_t>(body + 14, "bits per sample");
            if (format == kFormatExtensible) {
                if (len < 40) r.fail(body, "extensible fmt chunk shorter than 40 bytes");
                format = r.get<std::uint16_t>(body + 24, "extensible sub-format");
            }
            if (channels != 1) r.fail(body + 2, "only mono audio is supported, found " + std::to_string(channels) + " channels");
            if (rate == 0) r.fail(body + 4, "sample rate is zero");
            if (!((format == kFormatPcm && bits == 16) || (format == kFormatFloat && bits == 32)))
                r.fail(body, "unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                                 " bits); expected PCM16 or float32");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) r.fail(pos, "data chunk before fmt chunk");
            const std::size_t width = bits / 8;
            if (len % width != 0) r.fail(pos + 4, "data size is not a multiple of the sample width");
            r.need(body, len, "data chunk");
            dsp::Waveform wav;
            wav.rate = rate;
            wav.samples.resize(len / width);
            for (std::size_t i = 0; i < wav.samples.size(); ++i) {
                if (format == kFormatPcm) {
                    std::int16_t s;
                    std::memcpy(&s, r.at(body + i * 2), 2);
                    wav.samples[i] = s / 32768.0;
                } else {
                    float s;
                    std::memcpy(&s, r.at(body + i * 4), 4);
                    if (!std::isfinite(s)) r.fail(body + i * 4, "non-finite sample");
                    wav.samples[i] = s;
                }
            }
            return wav;
        }
        pos = body + len + (len & 1u);
    }
    r.fail(pos, have_fmt ? "no data chunk" : "no fmt chunk");
}

std::string encode_wav(const dsp::Waveform& wav, WavEncoding enc) {
    wav.validate();
    const double rounded = std::round(wav.rate);
    if (rounded != wav.rate || rounded > 4294967295.0)
        throw InvalidArgument("WAV needs an integral sample rate, got " + std::to_string(wav.rate));
    const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(wav.samples.size() * (bits / 8));
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put<std::uint32_t>(out, 36 + data_len);
    out += "WAVEfmt ";
    put<std::uint32_t>(out, 16);
    put<std::uint16_t>(out, enc == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
    put<std::uint16_t>(out, 1);
    const auto rate = static_cast<std::uint32_t>(rounded);
    put<std::uint32_t>(out, rate);
    put<std::uint32_t>(out, rate * (bits / 8));
    put<std::uint16_t>(out, bits / 8);
    put<std::uint16_t>(out, bits);
    out += "data";
    put<std::uint32_t>(out, data_len);
    for (double s : wav.samples) {
        if (enc == WavEncoding::Pcm16) {
            const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
            put<std::int16_t>(out, static_cast<std::int16_t>(q));
        } else {
            put<float>(out, static_cast<float>(s));
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

dsp::Waveform read_wav(const std::string& path) { return parse_wav(read_file(path), path); }

void write_wav(const std::string& path, const dsp::Waveform& wav, WavEncoding enc) {
    const std::string bytes = encode_wav(wav, enc);
    atomic_write(path, [&](std::ostream& os) { os.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); });
}

void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    try {
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot open '" + tmp + "' for writing");
            writer(out);
            out.flush();
            if (!out) throw DataError("write to '" + tmp + "' failed");
        }
        std::filesystem::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
}

}  // namespace msbwe::io
