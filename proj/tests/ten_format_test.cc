// Copyright 2026 The splitsim Authors.
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


#include "splitsim/ten_format.h"

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "test_util.h"

namespace splitsim {
namespace {

TEST(TenFormatTest, RoundTripIsBitExact) {
  Tensor t = testing::RandomTensor({2, 3, 4, 5}, 1, -1e6f, 1e6f);
  t.data()[0] = -0.0f;
  t.data()[1] = std::numeric_limits<float>::denorm_min();
  t.data()[2] = std::numeric_limits<float>::infinity();
  Tensor back = DecodeTen(EncodeTen(t));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_TRUE(back.BitEqual(t));
  EXPECT_TRUE(std::signbit(back.data()[0]));
}

TEST(TenFormatTest, HeaderLayout) {
  Tensor t(TensorShape{1, 2, 3, 4}, 1.0f);
  auto bytes = EncodeTen(t);
  ASSERT_EQ(bytes.size(), kTenHeaderBytes + 24 * 4);
  EXPECT_EQ(bytes[0], 'S');
  EXPECT_EQ(bytes[3], 'N');
  size_t off = 6;
  EXPECT_EQ(le::GetU32(bytes, &off), 1u);
  EXPECT_EQ(le::GetU32(bytes, &off), 2u);
  EXPECT_EQ(le::GetU32(bytes, &off), 3u);
  EXPECT_EQ(le::GetU32(bytes, &off), 4u);
}

TEST(TenFormatTest, RejectsCorruptInput) {
  auto good = EncodeTen(Tensor(TensorShape{1, 1, 2, 2}, 3.0f));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(DecodeTen(bad_magic), FormatError);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(DecodeTen(truncated), FormatError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(DecodeTen(trailing), FormatError);

  // Header claims 3x2 while the payload holds 2x2.
  auto dims = good;
  dims[6 + 8] = 3;
  EXPECT_THROW(DecodeTen(dims), FormatError);

  auto zero_dim = good;
  zero_dim[6] = 0;
  EXPECT_THROW(DecodeTen(zero_dim), FormatError);

  EXPECT_THROW(DecodeTen(std::vector<uint8_t>{'S', 'T'}), FormatError);
}

TEST(TenFormatTest, SequentialDecodeAdvancesOffset) {
  std::vector<uint8_t> buf;
  Tensor a = testing::RandomTensor({1, 1, 2, 3}, 2);
  Tensor b = testing::RandomTensor({2, 1, 1, 1}, 3);
  EncodeTen(a, buf);
  EncodeTen(b, buf);
  size_t off = 0;
  EXPECT_TRUE(DecodeTen(buf, &off).BitEqual(a));
  EXPECT_TRUE(DecodeTen(buf, &off).BitEqual(b));
  EXPECT_EQ(off, buf.size());
}

TEST(TenFormatTest, FileRoundTripAndMissingFile) {
  auto dir = testing::TempDir("ten");
  Tensor t = testing::RandomTensor({1, 2, 3, 3}, 4);
  SaveTen(dir / "t.ten", t);
  EXPECT_TRUE(LoadTen(dir / "t.ten").BitEqual(t));
  EXPECT_THROW(LoadTen(dir / "absent.ten"), std::runtime_error);
}

TEST(LittleEndianTest, PutGetRoundTrip) {
  std::vector<uint8_t> buf;
  le::PutU8(buf, 0xAB);
  le::PutU16(buf, 0x1234);
  le::PutU32(buf, 0xDEADBEEF);
  le::PutU64(buf, 0x0102030405060708ull);
  EXPECT_EQ(buf[1], 0x34);
  size_t off = 0;
  EXPECT_EQ(le::GetU8(buf, &off), 0xAB);
  EXPECT_EQ(le::GetU16(buf, &off), 0x1234);
  EXPECT_EQ(le::GetU32(buf, &off), 0xDEADBEEFu);
  EXPECT_EQ(le::GetU64(buf, &off), 0x0102030405060708ull);
  EXPECT_THROW(le::GetU8(buf, &off), std::exception);
}

}  // namespace
}  // namespace splitsim
