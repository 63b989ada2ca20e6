#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "melodica/audio.hpp"
#include "melodica/errors.hpp"

namespace melodica {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t le32(const std::uint8_t *p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void put16(std::vector<std::uint8_t> &out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_tag(std::vector<std::uint8_t> &out, const char *tag) { out.insert(out.end(), tag, tag + 4); }

std::int16_t quantize(double x) {
  const double v = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

} // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::size_t channel) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw MalformedHeader("missing RIFF/WAVE signature");

  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t *chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size())
        throw MalformedHeader("truncated fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 40 || body + 26 > bytes.size())
          throw MalformedHeader("truncated extensible fmt chunk");
        format = le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt)
        throw MalformedHeader("data chunk before fmt chunk");
      if (format != kFormatPcm)
        throw UnsupportedEncoding("only integer PCM is supported");
      if (bits != 16)
        throw UnsupportedEncoding("only 16-bit samples are supported, got " + std::to_string(bits));
      if (channels < 1 || channels > 4)
        throw UnsupportedEncoding("1 to 4 channels supported, got " + std::to_string(channels));
      if (rate == 0)
        throw MalformedHeader("zero sample rate");
      if (channel >= channels)
        throw std::invalid_argument("channel " + std::to_string(channel) + " not in file");
      // Streaming writers often leave the size unset; keep whole frames.
      const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t frames = available / frame_bytes;
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        const auto raw =
            static_cast<std::int16_t>(le16(bytes.data() + body + i * frame_bytes + 2 * channel));
        clip.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw MalformedHeader(have_fmt ? "no data chunk" : "no fmt chunk");
}

AudioClip read_wav(const std::filesystem::path &path, std::size_t channel) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw MalformedHeader("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes, channel);
}

std::vector<std::uint8_t> encode_wav_channels(const std::vector<std::vector<double>> &channels,
                                              double sample_rate) {
  if (channels.empty() || channels.size() > 4)
    throw std::invalid_argument("1 to 4 channels supported");
  const std::size_t frames = channels.front().size();
  for (const auto &c : channels)
    if (c.size() != frames)
      throw std::invalid_argument("channels differ in length");
  const auto nch = static_cast<std::uint16_t>(channels.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(frames * nch * 2);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, nch);
  put32(out, rate);
  put32(out, rate * nch * 2);
  put16(out, static_cast<std::uint16_t>(nch * 2));
  put16(out, 16);
  put_tag(out, "data");
  put32(out, data_bytes);
  for (std::size_t i = 0; i < frames; ++i)
    for (const auto &c : channels)
      put16(out, static_cast<std::uint16_t>(quantize(c[i])));
  return out;
}

std::vector<std::uint8_t> encode_wav(const AudioClip &clip) {
  clip.validate();
  return encode_wav_channels({clip.samples}, clip.sample_rate);
}

void write_wav(const std::filesystem::path &path, const AudioClip &clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace melodica
