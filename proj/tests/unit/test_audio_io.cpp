#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "mrkd/audio_io.hpp"
#include "mrkd/error.hpp"
#include "oracles.hpp"

using namespace mrkd;
using audio::AudioClip;
using audio::CropMode;

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

// Hand-rolled RIFF writer, independent of encode_wav.
std::vector<std::uint8_t> riff(const std::vector<std::int16_t>& interleaved, std::uint16_t channels,
                               std::uint32_t rate = 44100, std::uint16_t format = 1, std::uint16_t bits = 16) {
  std::vector<std::uint8_t> b;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(b, 16);
  put16(b, format);
  put16(b, channels);
  put32(b, rate);
  put32(b, rate * channels * bits / 8);
  put16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put16(b, bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(b, data_bytes);
  for (auto s : interleaved) put16(b, static_cast<std::uint16_t>(s));
  return b;
}

AudioClip clip_of(std::vector<float> samples, double rate = 44100) {
  AudioClip c;
  c.samples = std::move(samples);
  c.sample_rate = rate;
  return c;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kIo;
}

}  // namespace

TEST(LoadWav, ZeroSignal) {
  auto clip = audio::decode_wav(riff({0, 0, 0}, 1));
  EXPECT_EQ(clip.samples, (std::vector<float>{0.f, 0.f, 0.f}));
  EXPECT_EQ(clip.sample_rate, 44100);
}

TEST(LoadWav, FullScaleMapping) {
  auto clip = audio::decode_wav(riff({32767, -32768}, 1));
  ASSERT_EQ(clip.size(), 2u);
  EXPECT_FLOAT_EQ(clip.samples[0], 32767.0f / 32768.0f);
  EXPECT_NEAR(clip.samples[0], 0.99997, 1e-5);
  EXPECT_EQ(clip.samples[1], -1.0f);
}

TEST(LoadWav, StereoIsAveraged) {
  auto clip = audio::decode_wav(riff({16384, 0}, 2));
  ASSERT_EQ(clip.size(), 1u);
  EXPECT_EQ(clip.samples[0], 0.25f);
}

TEST(LoadWav, SampleRateFromHeader) {
  EXPECT_EQ(audio::decode_wav(riff({1, 2}, 1, 22050)).sample_rate, 22050);
}

TEST(LoadWav, UnsupportedFieldsAreNamed) {
  auto expect_unsupported = [](const std::vector<std::uint8_t>& bytes, const std::string& field) {
    try {
      audio::decode_wav(bytes);
      ADD_FAILURE() << "accepted " << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kUnsupportedFormat);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_unsupported(riff({0, 0}, 1, 44100, 3), "format");
  expect_unsupported(riff({0, 0}, 1, 44100, 1, 24), "bit");
  expect_unsupported(riff({0, 0, 0}, 3), "channel");
}

TEST(LoadWav, MalformedHeaderIsDecodeError) {
  auto good = riff({1, 2, 3}, 1);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { audio::decode_wav(bad_magic); }), ErrorKind::kDecode);
  std::vector<std::uint8_t> truncated(good.begin(), good.begin() + 20);
  EXPECT_EQ(kind_of([&] { audio::decode_wav(truncated); }), ErrorKind::kDecode);
  EXPECT_EQ(kind_of([&] { audio::decode_wav({}); }), ErrorKind::kDecode);
}

TEST(LoadWav, SkipsUnknownChunks) {
  auto bytes = riff({100, -100}, 1);
  // insert a LIST chunk between fmt and data
  std::vector<std::uint8_t> list{'L', 'I', 'S', 'T', 4, 0, 0, 0, 'a', 'b', 'c', 'd'};
  bytes.insert(bytes.begin() + 36, list.begin(), list.end());
  auto clip = audio::decode_wav(bytes);
  ASSERT_EQ(clip.size(), 2u);
  EXPECT_EQ(clip.samples[0], 100.0f / 32768.0f);
}

TEST(LoadWav, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { audio::load_wav("/nonexistent/clip.wav"); }), ErrorKind::kIo);
}

TEST(LoadWav, RoundTripWithinOneLsb) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> s(257);
    for (auto& v : s) v = u(rng);
    auto clip = clip_of(s);
    auto back = audio::decode_wav(audio::encode_wav(clip));
    ASSERT_EQ(back.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_LE(std::abs(back.samples[i] - s[i]), 1.0f / 32768.0f);
  }
}

TEST(LoadWav, FileRoundTripIsByteStable) {
  auto dir = std::filesystem::temp_directory_path() / "mrkd_audio_io_test";
  std::filesystem::create_directories(dir);
  auto first = audio::decode_wav(riff({5, -7, 32767, -32768, 0}, 1));
  audio::write_wav(dir / "a.wav", first);
  auto second = audio::load_wav(dir / "a.wav");
  EXPECT_EQ(first.samples, second.samples);
  EXPECT_EQ(audio::encode_wav(second), riff({5, -7, 32767, -32768, 0}, 1));
  std::filesystem::remove_all(dir);
}

TEST(Resample, EqualRatesAreBitIdentical) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0, 0.3f);
  std::vector<float> s(1001);
  for (auto& v : s) v = n(rng);
  auto out = audio::resample_linear(clip_of(s), 44100);
  EXPECT_EQ(out.samples, s);
  EXPECT_EQ(out.sample_rate, 44100);
}

TEST(Resample, LinearMidpointsAndEdgeHold) {
  auto out = audio::resample_linear(clip_of({0.0f, 1.0f}, 2), 4);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out.samples[0], 0.0f);
  EXPECT_EQ(out.samples[1], 0.5f);
  EXPECT_EQ(out.samples[2], 1.0f);
  EXPECT_EQ(out.samples[3], 1.0f);
}

TEST(Resample, LengthIsRounded) {
  for (std::size_t n : {1u, 7u, 100u, 441u, 1000u}) {
    auto out = audio::resample_linear(clip_of(std::vector<float>(n, 0.1f), 48000), 44100);
    EXPECT_EQ(out.size(), static_cast<std::size_t>(std::llround(n * 44100.0 / 48000.0))) << n;
  }
}

TEST(Resample, NonPositiveRateRejected) {
  EXPECT_EQ(kind_of([] { audio::resample_linear(clip_of({0.f}), 0); }), ErrorKind::kParameter);
}

TEST(Resample, SineKeepsDominantFrequency) {
  const double f = 1000.0;
  std::vector<float> s(2205);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(std::sin(2 * std::numbers::pi * f * i / 22050));
  auto up = audio::resample_linear(clip_of(s, 22050), 44100);
  auto peak_hz = [](const std::vector<float>& x, double rate) {
    std::vector<double> d(x.begin(), x.end());
    auto spec = oracle::dft(d);
    std::size_t best = 1;
    for (std::size_t k = 1; k < spec.size(); ++k)
      if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
    return best * rate / static_cast<double>(x.size());
  };
  EXPECT_DOUBLE_EQ(peak_hz(s, 22050), 1000.0);
  EXPECT_DOUBLE_EQ(peak_hz(up.samples, 44100), 1000.0);
}

TEST(PadOrCrop, IdentityAtTargetLength) {
  std::vector<float> s{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_EQ(audio::pad_or_crop(clip_of(s), 10, CropMode::kEvalCenter).samples, s);
  EXPECT_EQ(audio::pad_or_crop(clip_of(s), 10, CropMode::kTrainRandom, 9).samples, s);
}

TEST(PadOrCrop, ShortClipsAreTiled) {
  auto out = audio::pad_or_crop(clip_of({1, 2, 3, 4}), 6, CropMode::kEvalCenter);
  EXPECT_EQ(out.samples, (std::vector<float>{1, 2, 3, 4, 1, 2}));
}

TEST(PadOrCrop, CenterCrop) {
  std::vector<float> s(100);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(i);
  auto out = audio::pad_or_crop(clip_of(s), 50, CropMode::kEvalCenter);
  ASSERT_EQ(out.size(), 50u);
  EXPECT_EQ(out.samples.front(), 25.0f);
  EXPECT_EQ(out.samples.back(), 74.0f);
}

TEST(PadOrCrop, EmptyClipRejected) {
  EXPECT_EQ(kind_of([] { audio::pad_or_crop(clip_of({}), 5, CropMode::kEvalCenter); }), ErrorKind::kInvalidInput);
}

TEST(PadOrCrop, AlwaysTargetLengthAndContiguous) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng() % 300, target = 1 + rng() % 300;
    std::vector<float> s(len);
    for (std::size_t i = 0; i < len; ++i) s[i] = static_cast<float>(i);
    for (auto mode : {CropMode::kEvalCenter, CropMode::kTrainRandom}) {
      auto out = audio::pad_or_crop(clip_of(s), target, mode, rng());
      ASSERT_EQ(out.size(), target);
      // consecutive samples of the cyclic extension
      for (std::size_t i = 1; i < target; ++i) {
        EXPECT_EQ(out.samples[i], static_cast<float>((static_cast<std::size_t>(out.samples[i - 1]) + 1) % len));
      }
    }
  }
}

TEST(PadOrCrop, RandomCropIsSeeded) {
  std::vector<float> s(1000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(i);
  auto a = audio::pad_or_crop(clip_of(s), 100, CropMode::kTrainRandom, 42);
  auto b = audio::pad_or_crop(clip_of(s), 100, CropMode::kTrainRandom, 42);
  EXPECT_EQ(a.samples, b.samples);
  int moved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    moved += audio::pad_or_crop(clip_of(s), 100, CropMode::kTrainRandom, seed).samples[0] != a.samples[0];
  }
  EXPECT_GT(moved, 15);
}
