#pragma once

// Small end-to-end fixtures: the default synthetic corpus and an encoder fitted on it.

#include "cftgan/training.hpp"

namespace cftgan::testing {

inline const std::vector<data::ClipSample>& toy_corpus() {
    static const auto corpus = data::synthesize_corpus(data::default_grid(data::Scale::toy()), 1);
    return corpus;
}

inline std::vector<std::string> captions_of(const std::vector<data::ClipSample>& clips) {
    std::vector<std::string> out;
    for (const auto& c : clips) out.push_back(c.caption);
    return out;
}

inline captions::CaptionEncoder fit_encoder(const train::TrainConfig& cfg, const std::vector<std::string>& caps) {
    captions::CaptionEncoderConfig ec;
    ec.word_dim = cfg.word_dim;
    ec.num_centers = cfg.mixture_centers;
    ec.embedding_dim = cfg.dims.phi_dim;
    ec.seed = cfg.seed;
    return captions::CaptionEncoder::fit(caps, ec);
}

inline const captions::CaptionEncoder& toy_encoder() {
    static const auto enc = fit_encoder(train::TrainConfig::toy(), captions_of(toy_corpus()));
    return enc;
}

/// Toy config shrunk further so a handful of steps run in well under a second.
inline train::TrainConfig quick_config(std::int64_t iterations = 20) {
    train::TrainConfig c = train::TrainConfig::toy();
    c.iterations = iterations;
    c.batch_size = 2;
    c.dims.base_width = 4;
    return c;
}

}  // namespace cftgan::testing
