#include "tokweight/bench.hpp"

#include <algorithm>
#include <chrono>

#include "tokweight/error.hpp"

namespace tokweight {

BenchResult bench_encode(const EncoderModel& model, const EncoderConfig& cfg, const std::vector<int>& ids,
                         const std::vector<float>& weights, std::size_t iterations, std::size_t rounds) {
    if (iterations == 0 || rounds == 0) throw Error(ErrorKind::InvalidArgument, "iterations and rounds must be positive");
    rounds = std::min(rounds, iterations);
    const std::size_t per_round = (iterations + rounds - 1) / rounds;
    using clock = std::chrono::steady_clock;
    BenchResult out;
    out.iterations = per_round * rounds;
    std::vector<double> ratios;
    volatile float sink = 0.0f;
    // Warm-up.
    sink = sink + encode_plain<float>(ids, model, cfg).vector[0];
    sink = sink + encode<float>(ids, weights, model, cfg).vector[0];
    for (std::size_t r = 0; r < rounds; ++r) {
        auto t0 = clock::now();
        for (std::size_t i = 0; i < per_round; ++i) sink = sink + encode_plain<float>(ids, model, cfg).vector[0];
        auto t1 = clock::now();
        for (std::size_t i = 0; i < per_round; ++i) sink = sink + encode<float>(ids, weights, model, cfg).vector[0];
        auto t2 = clock::now();
        const double plain = std::chrono::duration<double>(t1 - t0).count();
        const double rew = std::chrono::duration<double>(t2 - t1).count();
        out.plain_seconds += plain;
        out.reweighted_seconds += rew;
        ratios.push_back(rew / std::max(plain, 1e-12));
    }
    std::sort(ratios.begin(), ratios.end());
    const std::size_t n = ratios.size();
    out.median_round_ratio = n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
    out.ratio = out.reweighted_seconds / std::max(out.plain_seconds, 1e-12);
    return out;
}

}  // namespace tokweight
