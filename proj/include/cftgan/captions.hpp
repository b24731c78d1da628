#pragma once

// Caption features: tokens -> word vectors -> hybrid Gaussian/Laplacian
// mixture Fisher vector -> PCA embedding phi -> conditioning augmentation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cftgan/blob_file.hpp"
#include "cftgan/layers.hpp"
#include "cftgan/rng.hpp"

namespace cftgan::captions {

/// Lowercases, replaces every non-alphanumeric byte with a separator and
/// splits on whitespace. Throws EmptyCaption if no token survives.
std::vector<std::string> tokenize(std::string_view caption);

using WordVec = std::vector<double>;
using WordVecSeq = std::vector<WordVec>;

/// Seeded word-vector table. Tokens without an explicit entry map to a
/// vector derived from a stable hash of (seed, token), so lookups never fail
/// and are reproducible across runs and platforms.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

    void set(const std::string& token, WordVec vec);
    WordVec lookup(std::string_view token) const;
    WordVecSeq embed(const std::vector<std::string>& tokens) const;

    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }
    const std::map<std::string, WordVec, std::less<>>& explicit_entries() const { return entries_; }

private:
    int dim_ = 16;
    std::uint64_t seed_ = 0;
    std::map<std::string, WordVec, std::less<>> entries_;
};

enum class Family : std::uint8_t { Gaussian = 0, Laplacian = 1 };

/// Diagonal mixture whose centers are individually Gaussian or Laplacian.
/// For a Laplacian center `means` holds the location and `scales` the
/// diversity b; for a Gaussian center they are the mean and standard deviation.
struct HybridMixture {
    int dim = 0;
    std::vector<double> weights;
    std::vector<WordVec> means;
    std::vector<WordVec> scales;
    std::vector<Family> family;

    int num_centers() const { return static_cast<int>(weights.size()); }
    double log_component_density(int k, const WordVec& x) const;
    /// Sum over points of log sum_k w_k p_k(x).
    double log_likelihood(const std::vector<WordVec>& points) const;
    /// Posterior center probabilities for one point.
    std::vector<double> responsibilities(const WordVec& x) const;
};

enum class FamilySelection { HeldOut, AllGaussian, AllLaplacian };

struct MixtureFitOptions {
    int num_centers = 4;
    std::uint64_t seed = 0;
    double scale_floor = 1e-4;
    double tolerance = 1e-6;  // relative log-likelihood change
    int max_iterations = 200;
    FamilySelection selection = FamilySelection::HeldOut;
};

struct MixtureFit {
    HybridMixture mixture;
    /// Log-likelihood of the final EM phase, before the first and after every iteration.
    std::vector<double> log_likelihood_trace;
};

/// EM over the pooled word vectors of the corpus. With HeldOut selection a
/// Gaussian-only fit on 80% of the points precedes a per-center
/// Gaussian-vs-Laplacian choice by held-out likelihood; the families are then
/// frozen and EM runs on all points. Throws DegenerateCorpus if the pool has
/// fewer distinct vectors than centers.
MixtureFit fit_hybrid_mixture(const std::vector<WordVecSeq>& corpus, const MixtureFitOptions& options);

/// Fisher vector of dimension 2 * D * Kc. The first Kc * D entries are the
/// per-center mean gradients (center-major), the remaining Kc * D the scale
/// gradients. Gradients are Fisher-normalized, averaged over tokens, then
/// signed-square-root and L2 normalized. Throws DimensionMismatch.
std::vector<double> fisher_vector(const WordVecSeq& words, const HybridMixture& mixture);

inline std::size_t fisher_dim(int word_dim, int centers) { return 2u * static_cast<std::size_t>(word_dim) * centers; }

struct PcaProjection {
    int input_dim = 0;
    std::vector<double> mean;
    std::vector<std::vector<double>> components;  // [E][input_dim], orthonormal rows
    std::vector<double> variances;                // eigenvalues of the sample covariance

    int output_dim() const { return static_cast<int>(components.size()); }
};

/// Top-`components` principal directions of the centered samples. Each
/// direction's largest-magnitude entry is made positive. Throws RankDeficient
/// if the centered corpus has rank below `components`.
PcaProjection pca_fit(const std::vector<std::vector<double>>& samples, int components);
std::vector<double> pca_project(const std::vector<double>& x, const PcaProjection& pca);
std::vector<double> pca_reconstruct(const std::vector<double>& phi, const PcaProjection& pca);

struct CaptionEmbedding {
    std::vector<float> phi;

    int dim() const { return static_cast<int>(phi.size()); }
    friend bool operator==(const CaptionEmbedding&, const CaptionEmbedding&) = default;
};

struct CaptionEncoderConfig {
    int word_dim = 16;
    int num_centers = 4;
    int embedding_dim = 32;
    std::uint64_t seed = 0;
};

/// Full caption -> phi pipeline with its fitted artifacts.
class CaptionEncoder {
public:
    CaptionEncoder() = default;

    /// Fits the mixture on the captions' word vectors and the PCA on their Fisher vectors.
    static CaptionEncoder fit(const std::vector<std::string>& captions, const CaptionEncoderConfig& config);

    CaptionEmbedding encode(std::string_view caption) const;
    std::vector<double> raw_fisher_vector(std::string_view caption) const;

    const CaptionEncoderConfig& config() const { return config_; }
    const EmbeddingTable& table() const { return table_; }
    const HybridMixture& mixture() const { return mixture_; }
    const PcaProjection& pca() const { return pca_; }
    int embedding_dim() const { return pca_.output_dim(); }

    /// Arrays are prefixed with `prefix` so the encoder can live inside other files.
    void append_to(BlobFile& file, const std::string& prefix) const;
    static CaptionEncoder read_from(const BlobFile& file, const std::string& prefix);

    void save(const std::filesystem::path& path) const;
    static CaptionEncoder load(const std::filesystem::path& path);

private:
    CaptionEncoderConfig config_;
    EmbeddingTable table_;
    HybridMixture mixture_;
    PcaProjection pca_;
};

/// Affine maps phi -> mu and phi -> log sigma, trained with their generator.
struct ConditionParams {
    nn::Linear mu_map;
    nn::Linear logsigma_map;

    ConditionParams() = default;
    ConditionParams(int phi_dim, int condition_dim, Rng& rng);

    int condition_dim() const { return mu_map.out_features(); }

    struct Sample {
        ag::Var c;
        ag::Var mu;
        ag::Var logsigma;
    };
    /// c = mu(phi) + exp(logsigma(phi)) * eps, batched: phi [N, E], eps [N, C].
    Sample operator()(const ag::Var& phi, const ag::Var& eps) const;

    void visit(nn::ParamVisitor& v, const std::string& prefix);
};

/// Single-sample form of the reparameterized draw; pure given (phi, eps).
std::vector<float> condition_augment(const CaptionEmbedding& phi, const ConditionParams& params,
                                     const std::vector<float>& eps);

/// Mean over the batch of KL(N(mu, sigma^2) || N(0, I)).
ag::Var condition_kl(const ConditionParams::Sample& sample);

}  // namespace cftgan::captions
