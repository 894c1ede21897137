#pragma once

#include <vector>

#include "tokweight/encoder.hpp"

namespace tokweight {

struct BenchResult {
    std::size_t iterations = 0;
    double plain_seconds = 0.0;
    double reweighted_seconds = 0.0;
    double ratio = 0.0;               // mean reweighted time / mean plain time
    double median_round_ratio = 0.0;  // median over rounds of the same ratio
};

// Times plain and reweighted encoding of the same prompt. The two variants are
// interleaved in rounds so drift in machine load hits both equally.
BenchResult bench_encode(const EncoderModel& model, const EncoderConfig& cfg, const std::vector<int>& ids,
                         const std::vector<float>& weights, std::size_t iterations, std::size_t rounds = 10);

}  // namespace tokweight
