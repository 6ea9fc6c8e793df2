#pragma once

#include <cstdint>
#include <filesystem>

namespace hm::fixture {

/// Writes a synthetic corpus for exercising the whole pipeline offline:
/// eight motions (one dictionary recording per gloss variant plus four
/// segments cut from two episodes), matching hand estimates, phonology for
/// four variants of three words, label streams, sign embeddings, a
/// dictionary, recorded language-model replies for every prompt the
/// describe stage issues, and pipeline.json. The same seed gives the same
/// bytes.
void write_corpus(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace hm::fixture
