#include <doctest.h>

#include <numbers>

#include "cftgan/captions.hpp"
#include "cftgan/error.hpp"
#include "test_support.hpp"

using namespace cftgan;
using namespace cftgan::captions;
using namespace cftgan::testing;

namespace {

std::vector<WordVecSeq> as_corpus(const std::vector<WordVec>& points) {
    std::vector<WordVecSeq> corpus;
    for (const auto& p : points) corpus.push_back({p});
    return corpus;
}

HybridMixture single_center(WordVec mean, WordVec scale, Family fam) {
    HybridMixture m;
    m.dim = static_cast<int>(mean.size());
    m.weights = {1.0};
    m.means = {std::move(mean)};
    m.scales = {std::move(scale)};
    m.family = {fam};
    return m;
}

/// Fisher vector of a one-center mixture written out from the log-density gradients.
std::vector<double> one_center_fv(const WordVecSeq& xs, const HybridMixture& m) {
    const int d = m.dim;
    std::vector<double> g(2 * d, 0.0);
    for (const auto& x : xs) {
        for (int i = 0; i < d; ++i) {
            const double u = (x[i] - m.means[0][i]) / m.scales[0][i];
            if (m.family[0] == Family::Gaussian) {
                // d/dmu = u / sigma, Fisher information 1 / sigma^2; d/dsigma = (u^2 - 1) / sigma, information 2 / sigma^2
                g[i] += u;
                g[d + i] += (u * u - 1.0) / std::sqrt(2.0);
            } else {
                // d/dmu = sign(u) / b, information 1 / b^2; d/db = (|u| - 1) / b, information 1 / b^2
                g[i] += (u > 0) - (u < 0);
                g[d + i] += std::fabs(u) - 1.0;
            }
        }
    }
    double norm = 0.0;
    for (auto& v : g) {
        v /= static_cast<double>(xs.size());
        v = std::copysign(std::sqrt(std::fabs(v)), v);
        norm += v * v;
    }
    for (auto& v : g) v /= std::sqrt(norm);
    return g;
}

}  // namespace

TEST_CASE("tokenizer") {
    CHECK(tokenize("A man is playing golf.") == std::vector<std::string>{"a", "man", "is", "playing", "golf"});
    CHECK(tokenize("  Golf  ") == std::vector<std::string>{"golf"});
    CHECK_THROWS_AS(tokenize("!!!"), Error);
    try {
        tokenize("");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyCaption);
    }
}

TEST_CASE("word vectors are deterministic per token") {
    EmbeddingTable t(16, 3);
    const auto seq = t.embed({"golf"});
    REQUIRE(seq.size() == 1);
    CHECK(seq[0].size() == 16);
    const auto twice = t.embed({"golf", "golf"});
    CHECK(twice[0] == twice[1]);
    EmbeddingTable other(16, 3);
    CHECK(other.lookup("golf") == t.lookup("golf"));
    CHECK(EmbeddingTable(16, 4).lookup("golf") != t.lookup("golf"));
    t.set("golf", WordVec(16, 0.5));
    CHECK(t.lookup("golf") == WordVec(16, 0.5));
}

TEST_CASE("one-center mixture recovers the pooled sample mean") {
    Rng rng(1);
    std::vector<WordVecSeq> corpus;
    WordVec sum(3, 0.0);
    std::size_t n = 0;
    for (int c = 0; c < 20; ++c) {
        WordVecSeq seq;
        for (int t = 0; t < 1 + c % 4; ++t) {
            WordVec x{rng.normal() + 1.0, 2.0 * rng.normal(), rng.uniform()};
            for (int i = 0; i < 3; ++i) sum[i] += x[i];
            ++n;
            seq.push_back(x);
        }
        corpus.push_back(seq);
    }
    MixtureFitOptions opt;
    opt.num_centers = 1;
    opt.selection = FamilySelection::AllGaussian;
    const auto fit = fit_hybrid_mixture(corpus, opt);
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(fit.mixture.means[0][i] - sum[i] / n) < 1e-6);
}

TEST_CASE("two separated clusters are each found") {
    Rng rng(2);
    const WordVec a{-5.0, 0.0}, b{5.0, 3.0};
    std::vector<WordVec> pts;
    for (int i = 0; i < 200; ++i) {
        const WordVec& c = i % 2 ? a : b;
        pts.push_back({c[0] + 0.3 * rng.normal(), c[1] + 0.3 * rng.normal()});
    }
    MixtureFitOptions opt;
    opt.num_centers = 2;
    const auto fit = fit_hybrid_mixture(as_corpus(pts), opt);
    for (const auto& truth : {a, b}) {
        double best = 1e9;
        for (const auto& m : fit.mixture.means) best = std::min(best, std::hypot(m[0] - truth[0], m[1] - truth[1]));
        CHECK(best < 0.1);
    }
}

TEST_CASE("identical points hit the scale floor without blowing up") {
    const std::vector<WordVec> pts(10, WordVec{1.0, 2.0});
    MixtureFitOptions opt;
    opt.num_centers = 1;
    const auto fit = fit_hybrid_mixture(as_corpus(pts), opt);
    for (double s : fit.mixture.scales[0]) CHECK(s == doctest::Approx(opt.scale_floor));
    for (double ll : fit.log_likelihood_trace) CHECK(std::isfinite(ll));
    opt.num_centers = 2;
    CHECK_THROWS_AS(fit_hybrid_mixture(as_corpus(pts), opt), Error);
}

TEST_CASE("EM log-likelihood never decreases") {
    Rng rng(3);
    std::vector<WordVec> pts;
    for (int i = 0; i < 300; ++i) {
        // Heavy-tailed mixture so both families show up.
        const double s = i % 3 == 0 ? 1.0 : 0.2;
        pts.push_back({s * rng.normal() + (i % 3), std::log(rng.uniform() + 1e-3), rng.normal()});
    }
    for (auto sel : {FamilySelection::HeldOut, FamilySelection::AllGaussian, FamilySelection::AllLaplacian}) {
        MixtureFitOptions opt;
        opt.num_centers = 3;
        opt.selection = sel;
        opt.seed = 11;
        const auto fit = fit_hybrid_mixture(as_corpus(pts), opt);
        REQUIRE(fit.log_likelihood_trace.size() >= 2);
        for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i) {
            CHECK(fit.log_likelihood_trace[i] >= fit.log_likelihood_trace[i - 1] - 1e-9 * std::fabs(fit.log_likelihood_trace[i - 1]));
        }
        CHECK(fit.mixture.log_likelihood(pts) == doctest::Approx(fit.log_likelihood_trace.back()));
    }
}

TEST_CASE("Fisher vector dimension is 2 D Kc") {
    CHECK(fisher_dim(300, 30) == 18000);
    Rng rng(4);
    HybridMixture m;
    m.dim = 300;
    for (int k = 0; k < 30; ++k) {
        m.weights.push_back(1.0 / 30);
        m.means.push_back(WordVec(300, rng.normal()));
        m.scales.push_back(WordVec(300, 1.0));
        m.family.push_back(k % 2 ? Family::Laplacian : Family::Gaussian);
    }
    WordVecSeq words(3, WordVec(300));
    for (auto& w : words)
        for (auto& x : w) x = rng.normal();
    const auto fv = fisher_vector(words, m);
    CHECK(fv.size() == 18000);
    double n2 = 0.0;
    for (double v : fv) n2 += v * v;
    CHECK(n2 == doctest::Approx(1.0));
}

TEST_CASE("a token at a Gaussian center has a zero mean-gradient block there") {
    HybridMixture m;
    m.dim = 2;
    m.weights = {0.5, 0.5};
    m.means = {{0.0, 0.0}, {3.0, -1.0}};
    m.scales = {{1.0, 2.0}, {0.5, 0.5}};
    m.family = {Family::Gaussian, Family::Gaussian};
    const auto fv = fisher_vector({{3.0, -1.0}}, m);
    CHECK(fv[2] == 0.0);
    CHECK(fv[3] == 0.0);
}

TEST_CASE("one-center Fisher vector matches the closed form") {
    const WordVecSeq xs{{0.3, -1.2}, {1.7, 0.4}};
    for (auto fam : {Family::Gaussian, Family::Laplacian}) {
        const auto m = single_center({0.5, -0.25}, {0.8, 1.5}, fam);
        const auto fv = fisher_vector(xs, m);
        const auto ref = one_center_fv(xs, m);
        REQUIRE(fv.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(std::fabs(fv[i] - ref[i]) < 1e-8);
    }
    CHECK_THROWS_AS(fisher_vector({{1.0, 2.0, 3.0}}, single_center({0, 0}, {1, 1}, Family::Gaussian)), Error);
}

TEST_CASE("PCA of a three point planar corpus matches the 2x2 eigen solution") {
    const std::vector<std::vector<double>> pts{{1.0, 2.0}, {3.0, 3.0}, {-1.0, 4.0}};
    const auto pca = pca_fit(pts, 1);
    double mx = 0, my = 0;
    for (const auto& p : pts) mx += p[0] / 3, my += p[1] / 3;
    double a = 0, b = 0, c = 0;
    for (const auto& p : pts) {
        a += (p[0] - mx) * (p[0] - mx) / 2;
        b += (p[0] - mx) * (p[1] - my) / 2;
        c += (p[1] - my) * (p[1] - my) / 2;
    }
    const double lambda = (a + c) / 2 + std::sqrt((a - c) * (a - c) / 4 + b * b);
    double vx = b, vy = lambda - a;
    const double n = std::hypot(vx, vy);
    vx /= n, vy /= n;
    if (std::fabs(vy) > std::fabs(vx) ? vy < 0 : vx < 0) vx = -vx, vy = -vy;
    CHECK(std::fabs(pca.variances[0] - lambda) < 1e-8);
    for (const auto& p : pts) {
        const double ref = vx * (p[0] - mx) + vy * (p[1] - my);
        CHECK(std::fabs(pca_project(p, pca)[0] - ref) < 1e-8);
    }
}

TEST_CASE("PCA with a complete basis reconstructs exactly") {
    Rng rng(5);
    std::vector<std::vector<double>> pts(12, std::vector<double>(4));
    for (auto& p : pts)
        for (auto& x : p) x = rng.normal();
    const auto pca = pca_fit(pts, 4);
    for (const auto& p : pts) {
        const auto r = pca_reconstruct(pca_project(p, pca), pca);
        for (int i = 0; i < 4; ++i) CHECK(std::fabs(r[i] - p[i]) < 1e-6);
    }
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 4; ++k) dot += pca.components[i][k] * pca.components[j][k];
            CHECK(std::fabs(dot - (i == j)) < 1e-9);
        }
    }
}

TEST_CASE("PCA compresses 18000 dimensions to 256") {
    Rng rng(6);
    std::vector<std::vector<double>> pts(300, std::vector<double>(18000));
    for (auto& p : pts)
        for (auto& x : p) x = rng.normal();
    const auto pca = pca_fit(pts, 256);
    CHECK(pca.output_dim() == 256);
    CHECK(pca_project(pts[0], pca).size() == 256);
    for (int i = 1; i < 256; ++i) CHECK(pca.variances[i] <= pca.variances[i - 1]);
}

TEST_CASE("PCA rejects rank-deficient corpora") {
    const std::vector<std::vector<double>> pts{{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
    CHECK_THROWS_AS(pca_fit(pts, 2), Error);
}

TEST_CASE("conditioning augmentation") {
    Rng rng(7);
    ConditionParams p(256, 128, rng);
    CHECK(p.condition_dim() == 128);
    const CaptionEmbedding phi{random_values(256, rng)};
    const ag::Var mu = p.mu_map(nn::pack_rows({phi.phi}));
    const ag::Var ls = p.logsigma_map(nn::pack_rows({phi.phi}));
    const auto c0 = condition_augment(phi, p, std::vector<float>(128, 0.0f));
    CHECK(std::equal(c0.begin(), c0.end(), mu.value().begin()));

    // Monte Carlo moments against mu and sigma.
    const int n = 10000;
    std::vector<double> s1(128, 0.0), s2(128, 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<float> eps(128);
        for (auto& e : eps) e = static_cast<float>(rng.normal());
        const auto c = condition_augment(phi, p, eps);
        for (int j = 0; j < 128; ++j) s1[j] += c[j], s2[j] += static_cast<double>(c[j]) * c[j];
    }
    for (int j = 0; j < 128; ++j) {
        const double sigma = std::exp(ls.value()[j]);
        const double m = s1[j] / n;
        const double sd = std::sqrt(s2[j] / n - m * m);
        CHECK(std::fabs(m - mu.value()[j]) < 4.0 * sigma / std::sqrt(n));
        CHECK(std::fabs(sd - sigma) < 0.05 * sigma);
    }
    CHECK_THROWS_AS(condition_augment(phi, p, std::vector<float>(3, 0.0f)), Error);
}

TEST_CASE("KL term vanishes for a standard normal condition") {
    ConditionParams::Sample s{ag::Var(), ag::Var::constant({2, 3}, 0.0f), ag::Var::constant({2, 3}, 0.0f)};
    CHECK(condition_kl(s).item() == doctest::Approx(0.0));
    ConditionParams::Sample t{ag::Var(), ag::Var::constant({1, 1}, 1.0f), ag::Var::constant({1, 1}, 0.0f)};
    CHECK(condition_kl(t).item() == doctest::Approx(0.5));
}

TEST_CASE("caption encoder fits, encodes and round-trips through a file") {
    std::vector<std::string> caps;
    for (const char* color : {"red", "green", "blue", "yellow"})
        for (const char* shape : {"square", "circle", "bar"})
            for (const char* dir : {"left", "right", "up", "down"})
                caps.push_back(std::string("a ") + color + " " + shape + " is moving " + dir);
    CaptionEncoderConfig cfg;
    cfg.embedding_dim = 8;
    const auto enc = CaptionEncoder::fit(caps, cfg);
    CHECK(enc.embedding_dim() == 8);
    const auto e1 = enc.encode(caps[0]);
    CHECK(e1.dim() == 8);
    CHECK(enc.encode(caps[0]) == e1);
    CHECK_FALSE(enc.encode(caps[1]) == e1);
    CHECK_THROWS_AS(enc.encode("..."), Error);

    TempDir dir("captions");
    enc.save(dir / "enc.cftc");
    const auto back = CaptionEncoder::load(dir / "enc.cftc");
    for (const auto& c : caps) CHECK(back.encode(c) == enc.encode(c));
}
