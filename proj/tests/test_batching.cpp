#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "crossconst/batching.hpp"
#include "support.hpp"

using namespace crossconst;

namespace {

TaggedPair pair_of_length(std::size_t n, int marker) {
    TaggedPair p;
    p.src_tokens.assign(n, 10);
    p.src_tokens[0] = 4;
    p.tgt_tokens.assign(n, marker);
    p.tgt_tokens.back() = Vocab::eos;
    return p;
}

}  // namespace

TEST(Batching, EnglishCentricPairsCountAndTags) {
    const auto w = testing_support::small_world(50, 20);
    const auto pairs = english_centric_pairs(w.corpus, {"L0"}, w.tok);
    EXPECT_EQ(pairs.size(), 4u * 50u);
    for (const auto& p : pairs) {
        EXPECT_EQ(p.src_tokens.front(), w.tok.vocab().tag(p.tgt_lang));
        EXPECT_EQ(p.tgt_tokens.back(), Vocab::eos);
        EXPECT_TRUE(p.src_lang.code == "L0" || p.tgt_lang.code == "L0");
        EXPECT_NE(p.src_lang, p.tgt_lang);
        for (int t : p.src_tokens) EXPECT_NE(t, Vocab::pad);
        for (int t : p.tgt_tokens) EXPECT_NE(t, Vocab::pad);
    }
    EXPECT_THROW(english_centric_pairs(w.corpus, {"L7"}, w.tok), DataError);
}

TEST(Batching, OverlongPairIsRejected) {
    std::vector<TaggedPair> pairs{pair_of_length(4, 11), pair_of_length(4, 12), pair_of_length(9, 13)};
    EXPECT_THROW(make_batches(pairs, 8, 1), DataError);
    pairs.pop_back();
    const auto b = make_batches(pairs, 8, 1);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0].members.size(), 2u);
}

TEST(Batching, EpochCoversEveryPairOnceWithinBudget) {
    std::mt19937_64 rng(3);
    std::vector<TaggedPair> pairs;
    for (int i = 0; i < 300; ++i)
        pairs.push_back(testing_support::random_pair(rng, 40, 3, 1 + int(rng() % 15), 1 + int(rng() % 15)));
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        const auto batches = make_batches(pairs, 64, seed);
        std::vector<std::size_t> seen;
        for (const auto& b : batches) {
            std::size_t longest = 0;
            for (auto i : b.members) longest = std::max(longest, pairs[i].length());
            EXPECT_LE(b.members.size() * longest, 64u);
            seen.insert(seen.end(), b.members.begin(), b.members.end());
        }
        std::sort(seen.begin(), seen.end());
        ASSERT_EQ(seen.size(), pairs.size());
        for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i);
    }
}

TEST(Batching, ShuffleIsDeterministicInSeed) {
    std::mt19937_64 rng(4);
    std::vector<TaggedPair> pairs;
    for (int i = 0; i < 100; ++i) pairs.push_back(testing_support::random_pair(rng, 40, 3, 5, 6));
    auto members = [](const std::vector<Batch>& bs) {
        std::vector<std::size_t> out;
        for (const auto& b : bs) out.insert(out.end(), b.members.begin(), b.members.end());
        return out;
    };
    EXPECT_EQ(members(make_batches(pairs, 40, 5)), members(make_batches(pairs, 40, 5)));
    EXPECT_NE(members(make_batches(pairs, 40, 5)), members(make_batches(pairs, 40, 6)));
}

TEST(Batching, CollateShiftsAndPads) {
    TaggedPair a, b;
    a.src_tokens = {4, 10, 11};
    a.tgt_tokens = {12, 13, Vocab::eos};
    b.src_tokens = {5, 10};
    b.tgt_tokens = {14, Vocab::eos};
    const auto pb = collate({&a, &b});
    EXPECT_EQ(pb.size, 2u);
    EXPECT_EQ(pb.src_len, 3u);
    EXPECT_EQ(pb.tgt_len, 3u);
    EXPECT_EQ(pb.src, (std::vector<int>{4, 10, 11, 5, 10, Vocab::pad}));
    EXPECT_EQ(pb.src_pad, (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1}));
    EXPECT_EQ(pb.tgt_in, (std::vector<int>{Vocab::bos, 12, 13, Vocab::bos, 14, Vocab::pad}));
    EXPECT_EQ(pb.tgt_out, (std::vector<int>{12, 13, Vocab::eos, 14, Vocab::eos, Vocab::pad}));
    EXPECT_EQ(pb.tgt_mask, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0}));
    EXPECT_EQ(pb.target_tokens(), 5u);
}

TEST(Batching, ParallelTsvRoundTrip) {
    std::vector<TextPair> pairs{{{"L0"}, {"L1"}, "the dog", "ka lo"}, {{"L2"}, {"L0"}, "mi", "a cat"}};
    std::stringstream ss;
    write_parallel_tsv(pairs, ss);
    const auto back = read_parallel_tsv(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].src_lang.code, "L2");
    EXPECT_EQ(back[1].tgt_text, "a cat");
    std::istringstream bad("L0\tL1\tonly three\n");
    EXPECT_THROW(read_parallel_tsv(bad), DataError);
}
