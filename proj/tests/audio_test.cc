// Copyright (c) 2026 The kwskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kws/audio.h"

#include <gtest/gtest.h>

#include <cstdint>
#include <string>
#include <vector>

#include "test_util.h"

namespace kws {
namespace {

using testing::DftPeakHz;
using testing::Sine;

void Put16(std::string* s, uint16_t v) {
  s->push_back(static_cast<char>(v & 0xff));
  s->push_back(static_cast<char>(v >> 8));
}
void Put32(std::string* s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s->push_back(static_cast<char>(v >> (8 * i)));
}

std::string WavBytes(uint16_t format, uint16_t channels, uint32_t rate,
                     uint16_t bits, const std::vector<int16_t>& data) {
  std::string s = "RIFF";
  const uint32_t data_bytes = static_cast<uint32_t>(data.size() * 2);
  Put32(&s, 36 + data_bytes);
  s += "WAVEfmt ";
  Put32(&s, 16);
  Put16(&s, format);
  Put16(&s, channels);
  Put32(&s, rate);
  Put32(&s, rate * channels * bits / 8);
  Put16(&s, static_cast<uint16_t>(channels * bits / 8));
  Put16(&s, bits);
  s += "data";
  Put32(&s, data_bytes);
  for (int16_t v : data) Put16(&s, static_cast<uint16_t>(v));
  return s;
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

TEST(WavTest, ScalesSamplesByInverse32768) {
  const auto clip = ParseWav(WavBytes(1, 1, 16000, 16, {16384, -32768, 0}), "t");
  EXPECT_EQ(clip.sample_rate, 16000);
  ASSERT_EQ(clip.size(), 3u);
  EXPECT_EQ(clip.samples[0], 0.5f);
  EXPECT_EQ(clip.samples[1], -1.0f);
  EXPECT_EQ(clip.samples[2], 0.0f);
}

TEST(WavTest, EmptyDataChunkIsMalformed) {
  EXPECT_EQ(CodeOf([] { ParseWav(WavBytes(1, 1, 16000, 16, {}), "t"); }),
            ErrorCode::kMalformedWav);
}

TEST(WavTest, StereoIsUnsupported) {
  EXPECT_EQ(CodeOf([] { ParseWav(WavBytes(1, 2, 44100, 16, {1, 2, 3, 4}), "t"); }),
            ErrorCode::kUnsupportedFormat);
}

TEST(WavTest, NonPcmAndEightBitAreUnsupported) {
  EXPECT_EQ(CodeOf([] { ParseWav(WavBytes(3, 1, 16000, 16, {1, 2}), "t"); }),
            ErrorCode::kUnsupportedFormat);
  EXPECT_EQ(CodeOf([] { ParseWav(WavBytes(1, 1, 16000, 8, {1, 2}), "t"); }),
            ErrorCode::kUnsupportedFormat);
}

TEST(WavTest, TruncatedAndGarbageAreMalformed) {
  std::string bytes = WavBytes(1, 1, 16000, 16, {1, 2, 3, 4});
  EXPECT_EQ(CodeOf([&] { ParseWav(bytes.substr(0, 30), "t"); }),
            ErrorCode::kMalformedWav);
  EXPECT_EQ(CodeOf([&] { ParseWav(bytes.substr(0, bytes.size() - 3), "t"); }),
            ErrorCode::kMalformedWav);
  EXPECT_EQ(CodeOf([] { ParseWav("not a wav file at all, definitely", "t"); }),
            ErrorCode::kMalformedWav);
}

TEST(WavTest, EncodeParseRoundTrip) {
  AudioClip clip{{0.25f, -0.5f, 0.999969482421875f, -1.0f}, 8000};
  const auto back = ParseWav(EncodeWav(clip), "t");
  EXPECT_EQ(back.sample_rate, 8000);
  EXPECT_EQ(back.samples, clip.samples);
}

TEST(WavTest, MissingFileNamesThePath) {
  try {
    ReadWav("/nonexistent/dir/x.wav");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.wav"),
              std::string::npos);
  }
}

TEST(ResampleTest, SameRateIsIdentity) {
  AudioClip clip{Sine(300, 16000, 1234), 16000};
  EXPECT_EQ(Resample(clip, 16000).samples, clip.samples);
}

TEST(ResampleTest, LengthFollowsRateRatio) {
  AudioClip clip{std::vector<float>(16000, 0.0f), 16000};
  EXPECT_EQ(Resample(clip, 8000).size(), 8000u);
  EXPECT_EQ(Resample(clip, 22050).size(), 22050u);
  AudioClip odd{std::vector<float>(1001, 0.0f), 16000};
  EXPECT_EQ(Resample(odd, 8000).size(), 501u);  // round(500.5) away from zero
}

TEST(ResampleTest, ToneKeepsItsFrequency) {
  AudioClip clip{Sine(1000, 16000, 16000), 16000};
  const auto down = Resample(clip, 8000);
  const size_t n = 4000;  // 2 Hz bins at 8 kHz
  EXPECT_NEAR(DftPeakHz(down.samples, 8000, n, 500, 2000), 1000.0,
              8000.0 / n);
}

TEST(ResampleTest, DownAndUpKeepsToneFrequency) {
  AudioClip clip{Sine(1500, 16000, 16000), 16000};
  const auto back = Resample(Resample(clip, 8000), 16000);
  EXPECT_EQ(back.size(), clip.size());
  const size_t n = 8000;
  EXPECT_NEAR(DftPeakHz(back.samples, 16000, n, 500, 3000), 1500.0,
              16000.0 / n);
}

TEST(ResampleTest, RejectsNonPositiveRate) {
  AudioClip clip{{0.0f}, 16000};
  EXPECT_THROW(Resample(clip, 0), Error);
}

TEST(SpeedPerturbTest, UnitFactorIsIdentity) {
  AudioClip clip{Sine(440, 16000, 999), 16000};
  EXPECT_EQ(SpeedPerturb(clip, 1.0).samples, clip.samples);
}

TEST(SpeedPerturbTest, LengthIsRoundedQuotient) {
  AudioClip clip{std::vector<float>(16000, 0.0f), 16000};
  EXPECT_EQ(SpeedPerturb(clip, 0.9).size(), 17778u);
  EXPECT_EQ(SpeedPerturb(clip, 1.1).size(), 14545u);
}

TEST(SpeedPerturbTest, FasterPlaybackRaisesPitch) {
  AudioClip clip{Sine(440, 16000, 32000), 16000};
  const auto fast = SpeedPerturb(clip, 1.1);
  const size_t n = 16000;  // 1 Hz bins
  EXPECT_NEAR(DftPeakHz(fast.samples, 16000, n, 300, 700), 484.0, 1.0);
  const auto slow = SpeedPerturb(clip, 0.9);
  EXPECT_NEAR(DftPeakHz(slow.samples, 16000, n, 300, 700), 396.0, 1.0);
}

// The periodic-phase fast path and the per-sample path agree.
TEST(SpeedPerturbTest, RationalAndIrrationalStepsAgree) {
  AudioClip clip{Sine(700, 16000, 4000), 16000};
  const auto a = internal::SincInterpolate(clip.samples, 3000, 1.25, 0.8);
  const auto b =
      internal::SincInterpolate(clip.samples, 3000, 1.25 + 1e-8, 0.8);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 2e-5);
}

TEST(SpeedPerturbTest, RejectsNonPositiveFactor) {
  AudioClip clip{{0.0f}, 16000};
  EXPECT_THROW(SpeedPerturb(clip, 0.0), Error);
}

}  // namespace
}  // namespace kws
