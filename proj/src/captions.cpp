#include "cftgan/captions.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cftgan/error.hpp"

namespace cftgan::captions {

std::vector<std::string> tokenize(std::string_view caption) {
    std::string cleaned;
    cleaned.reserve(caption.size());
    for (unsigned char ch : caption) {
        if (ch >= 0x80) {
            cleaned.push_back(static_cast<char>(ch));  // keep UTF-8 continuation bytes intact
        } else if (std::isalnum(ch)) {
            cleaned.push_back(static_cast<char>(std::tolower(ch)));
        } else {
            cleaned.push_back(' ');
        }
    }
    std::vector<std::string> tokens;
    std::istringstream is(cleaned);
    for (std::string tok; is >> tok;) tokens.push_back(std::move(tok));
    if (tokens.empty()) throw Error(ErrorCode::EmptyCaption, "caption has no tokens");
    return tokens;
}

// ---------------------------------------------------------------------------
// Embedding table

void EmbeddingTable::set(const std::string& token, WordVec vec) {
    if (static_cast<int>(vec.size()) != dim_) throw Error(ErrorCode::DimensionMismatch, "table entry dimension");
    entries_[token] = std::move(vec);
}

WordVec EmbeddingTable::lookup(std::string_view token) const {
    if (auto it = entries_.find(token); it != entries_.end()) return it->second;
    Rng rng(mix_seed(stable_hash(token) ^ mix_seed(seed_)));
    WordVec v(dim_);
    for (auto& x : v) x = static_cast<double>(static_cast<float>(rng.normal()));
    return v;
}

WordVecSeq EmbeddingTable::embed(const std::vector<std::string>& tokens) const {
    WordVecSeq out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(lookup(t));
    return out;
}

// ---------------------------------------------------------------------------
// Hybrid mixture

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double gaussian_log_density(const WordVec& x, const WordVec& mean, const WordVec& scale) {
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double z = (x[d] - mean[d]) / scale[d];
        acc += -kHalfLog2Pi - std::log(scale[d]) - 0.5 * z * z;
    }
    return acc;
}

double laplacian_log_density(const WordVec& x, const WordVec& loc, const WordVec& scale) {
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        acc += -std::log(2.0 * scale[d]) - std::fabs(x[d] - loc[d]) / scale[d];
    }
    return acc;
}

struct Points {
    std::vector<WordVec> x;
    int dim = 0;
    // sorted[d] = point indices ordered by coordinate d (for weighted medians)
    std::vector<std::vector<std::size_t>> sorted;

    void index() {
        sorted.assign(dim, {});
        for (int d = 0; d < dim; ++d) {
            auto& s = sorted[d];
            s.resize(x.size());
            std::iota(s.begin(), s.end(), std::size_t{0});
            std::stable_sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) { return x[a][d] < x[b][d]; });
        }
    }
};

std::size_t count_distinct(std::vector<WordVec> pts) {
    std::sort(pts.begin(), pts.end());
    return static_cast<std::size_t>(std::unique(pts.begin(), pts.end()) - pts.begin());
}

/// E-step: fills resp (n x K) and returns the total log-likelihood.
double e_step(const HybridMixture& mix, const Points& pts, std::vector<double>& resp) {
    const int k = mix.num_centers();
    resp.resize(pts.x.size() * k);
    std::vector<double> logp(k);
    double ll = 0.0;
    for (std::size_t i = 0; i < pts.x.size(); ++i) {
        for (int c = 0; c < k; ++c) logp[c] = std::log(mix.weights[c]) + mix.log_component_density(c, pts.x[i]);
        const double lse = log_sum_exp(logp);
        ll += lse;
        for (int c = 0; c < k; ++c) resp[i * k + c] = std::exp(logp[c] - lse);
    }
    return ll;
}

double weighted_median(const Points& pts, const std::vector<double>& resp, int k, int c, int d, double total) {
    const double half = 0.5 * total;
    double acc = 0.0;
    for (std::size_t idx : pts.sorted[d]) {
        acc += resp[idx * k + c];
        if (acc >= half) return pts.x[idx][d];
    }
    return pts.x[pts.sorted[d].back()][d];
}

/// Maximizes the expected complete-data log-likelihood for every center's
/// own family, with scales constrained to >= floor.
void m_step(HybridMixture& mix, const Points& pts, const std::vector<double>& resp, double floor) {
    const int k = mix.num_centers();
    const std::size_t n = pts.x.size();
    for (int c = 0; c < k; ++c) {
        double nk = 0.0;
        for (std::size_t i = 0; i < n; ++i) nk += resp[i * k + c];
        mix.weights[c] = nk / static_cast<double>(n);
        if (nk < 1e-300) continue;
        for (int d = 0; d < mix.dim; ++d) {
            if (mix.family[c] == Family::Gaussian) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += resp[i * k + c] * pts.x[i][d];
                const double mu = s / nk;
                double v = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dx = pts.x[i][d] - mu;
                    v += resp[i * k + c] * dx * dx;
                }
                mix.means[c][d] = mu;
                mix.scales[c][d] = std::max(std::sqrt(v / nk), floor);
            } else {
                const double loc = weighted_median(pts, resp, k, c, d, nk);
                double a = 0.0;
                for (std::size_t i = 0; i < n; ++i) a += resp[i * k + c] * std::fabs(pts.x[i][d] - loc);
                mix.means[c][d] = loc;
                mix.scales[c][d] = std::max(a / nk, floor);
            }
        }
    }
    // Guard against drift from a center with vanishing mass.
    const double total = std::accumulate(mix.weights.begin(), mix.weights.end(), 0.0);
    for (auto& w : mix.weights) w = std::max(w / total, 1e-300);
}

std::vector<double> run_em(HybridMixture& mix, const Points& pts, const MixtureFitOptions& opt) {
    std::vector<double> resp;
    std::vector<double> trace{e_step(mix, pts, resp)};
    for (int it = 0; it < opt.max_iterations; ++it) {
        m_step(mix, pts, resp, opt.scale_floor);
        const double ll = e_step(mix, pts, resp);
        const double prev = trace.back();
        trace.push_back(ll);
        if (std::fabs(ll - prev) <= opt.tolerance * std::fabs(prev)) break;
    }
    return trace;
}

HybridMixture initialize(const Points& pts, int k, Family family, const MixtureFitOptions& opt) {
    std::vector<WordVec> distinct = pts.x;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    // k-means++ seeding over distinct points.
    Rng rng(opt.seed);
    std::vector<WordVec> centers{distinct[rng.below(distinct.size())]};
    std::vector<double> dist(distinct.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < distinct.size(); ++i) {
            double d2 = 0.0;
            for (int d = 0; d < pts.dim; ++d) {
                const double diff = distinct[i][d] - centers.back()[d];
                d2 += diff * diff;
            }
            dist[i] = std::min(dist[i], d2);
            total += dist[i];
        }
        double r = rng.uniform() * total;
        std::size_t pick = 0;
        for (; pick + 1 < distinct.size(); ++pick) {
            if (dist[pick] > 0.0 && r < dist[pick]) break;
            r -= dist[pick];
        }
        while (dist[pick] <= 0.0 && pick > 0) --pick;
        centers.push_back(distinct[pick]);
    }

    WordVec global_scale(pts.dim, 0.0);
    WordVec global_mean(pts.dim, 0.0);
    for (const auto& x : pts.x) {
        for (int d = 0; d < pts.dim; ++d) global_mean[d] += x[d];
    }
    for (auto& m : global_mean) m /= static_cast<double>(pts.x.size());
    for (const auto& x : pts.x) {
        for (int d = 0; d < pts.dim; ++d) global_scale[d] += (x[d] - global_mean[d]) * (x[d] - global_mean[d]);
    }
    for (auto& s : global_scale) s = std::max(std::sqrt(s / static_cast<double>(pts.x.size())), opt.scale_floor);

    HybridMixture mix;
    mix.dim = pts.dim;
    mix.weights.assign(k, 1.0 / k);
    mix.means = centers;
    mix.scales.assign(k, global_scale);
    mix.family.assign(k, family);
    return mix;
}

double quantize(double x) { return static_cast<double>(static_cast<float>(x)); }

double quantize_up(double x) {
    float f = static_cast<float>(x);
    if (static_cast<double>(f) < x) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    return f;
}

void quantize(HybridMixture& mix, double floor) {
    for (auto& w : mix.weights) w = quantize(w);
    for (auto& m : mix.means) {
        for (auto& x : m) x = quantize(x);
    }
    for (auto& s : mix.scales) {
        for (auto& x : s) x = quantize_up(std::max(x, floor));
    }
}

}  // namespace

double HybridMixture::log_component_density(int k, const WordVec& x) const {
    return family[k] == Family::Gaussian ? gaussian_log_density(x, means[k], scales[k])
                                         : laplacian_log_density(x, means[k], scales[k]);
}

double HybridMixture::log_likelihood(const std::vector<WordVec>& points) const {
    std::vector<double> logp(num_centers());
    double ll = 0.0;
    for (const auto& x : points) {
        for (int c = 0; c < num_centers(); ++c) logp[c] = std::log(weights[c]) + log_component_density(c, x);
        ll += log_sum_exp(logp);
    }
    return ll;
}

std::vector<double> HybridMixture::responsibilities(const WordVec& x) const {
    std::vector<double> logp(num_centers());
    for (int c = 0; c < num_centers(); ++c) logp[c] = std::log(weights[c]) + log_component_density(c, x);
    const double lse = log_sum_exp(logp);
    for (auto& v : logp) v = std::exp(v - lse);
    return logp;
}

MixtureFit fit_hybrid_mixture(const std::vector<WordVecSeq>& corpus, const MixtureFitOptions& opt) {
    Points all;
    for (const auto& seq : corpus) {
        for (const auto& v : seq) {
            if (all.dim == 0) all.dim = static_cast<int>(v.size());
            if (static_cast<int>(v.size()) != all.dim) throw Error(ErrorCode::DimensionMismatch, "ragged word vectors");
            all.x.push_back(v);
        }
    }
    const int k = opt.num_centers;
    if (k < 1 || count_distinct(all.x) < static_cast<std::size_t>(k)) {
        throw Error(ErrorCode::DegenerateCorpus, "fewer distinct word vectors than mixture centers");
    }
    all.index();

    HybridMixture mix;
    if (opt.selection == FamilySelection::HeldOut) {
        Points fit_pts;
        Points held;
        fit_pts.dim = held.dim = all.dim;
        for (std::size_t i = 0; i < all.x.size(); ++i) (i % 5 == 4 ? held : fit_pts).x.push_back(all.x[i]);
        if (held.x.empty() || count_distinct(fit_pts.x) < static_cast<std::size_t>(k)) {
            mix = initialize(all, k, Family::Gaussian, opt);
        } else {
            fit_pts.index();
            mix = initialize(fit_pts, k, Family::Gaussian, opt);
            run_em(mix, fit_pts, opt);

            std::vector<double> resp;
            e_step(mix, fit_pts, resp);
            HybridMixture lap = mix;
            lap.family.assign(k, Family::Laplacian);
            m_step(lap, fit_pts, resp, opt.scale_floor);

            for (int c = 0; c < k; ++c) {
                double score_gauss = 0.0;
                double score_lap = 0.0;
                for (const auto& x : held.x) {
                    const double g = mix.responsibilities(x)[c];
                    score_gauss += g * gaussian_log_density(x, mix.means[c], mix.scales[c]);
                    score_lap += g * laplacian_log_density(x, lap.means[c], lap.scales[c]);
                }
                if (score_lap > score_gauss) {
                    mix.family[c] = Family::Laplacian;
                    mix.means[c] = lap.means[c];
                    mix.scales[c] = lap.scales[c];
                }
            }
        }
    } else {
        mix = initialize(all, k,
                         opt.selection == FamilySelection::AllLaplacian ? Family::Laplacian : Family::Gaussian, opt);
    }

    MixtureFit fit;
    fit.log_likelihood_trace = run_em(mix, all, opt);
    fit.mixture = std::move(mix);
    return fit;
}

std::vector<double> fisher_vector(const WordVecSeq& words, const HybridMixture& mix) {
    if (words.empty()) throw Error(ErrorCode::DimensionMismatch, "empty word sequence");
    const int k = mix.num_centers();
    const int dim = mix.dim;
    const std::size_t half = static_cast<std::size_t>(k) * dim;
    std::vector<double> fv(2 * half, 0.0);
    for (const auto& x : words) {
        if (static_cast<int>(x.size()) != dim) throw Error(ErrorCode::DimensionMismatch, "word dim vs mixture dim");
        const auto gamma = mix.responsibilities(x);
        for (int c = 0; c < k; ++c) {
            double* gm = fv.data() + static_cast<std::size_t>(c) * dim;
            double* gs = fv.data() + half + static_cast<std::size_t>(c) * dim;
            const double sw = std::sqrt(mix.weights[c]);
            for (int d = 0; d < dim; ++d) {
                const double z = (x[d] - mix.means[c][d]) / mix.scales[c][d];
                if (mix.family[c] == Family::Gaussian) {
                    gm[d] += gamma[c] * z / sw;
                    gs[d] += gamma[c] * (z * z - 1.0) / (std::numbers::sqrt2 * sw);
                } else {
                    const double sgn = z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
                    gm[d] += gamma[c] * sgn / sw;
                    gs[d] += gamma[c] * (std::fabs(z) - 1.0) / sw;
                }
            }
        }
    }
    const double inv_t = 1.0 / static_cast<double>(words.size());
    double norm2 = 0.0;
    for (auto& v : fv) {
        v *= inv_t;
        v = v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v);
        norm2 += v * v;
    }
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : fv) v *= inv;
    }
    return fv;
}

// ---------------------------------------------------------------------------
// PCA

PcaProjection pca_fit(const std::vector<std::vector<double>>& samples, int components) {
    if (samples.empty()) throw Error(ErrorCode::RankDeficient, "empty PCA corpus");
    const auto n = static_cast<Eigen::Index>(samples.size());
    const auto d = static_cast<Eigen::Index>(samples[0].size());
    if (components < 1 || components > d) {
        throw Error(ErrorCode::RankDeficient, "requested " + std::to_string(components) + " components of " +
                                                  std::to_string(d) + " dimensions");
    }
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(samples[i].size()) != d) throw Error(ErrorCode::DimensionMismatch, "ragged PCA corpus");
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = samples[i][j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

    // Eigenvectors of the covariance, via the Gram matrix when n < d.
    Eigen::MatrixXd dirs;   // d x r
    Eigen::VectorXd evals;  // r, descending
    if (d <= n) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((x.transpose() * x) / denom);
        evals = es.eigenvalues().reverse();
        dirs = es.eigenvectors().rowwise().reverse();
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
        const Eigen::VectorXd g = es.eigenvalues().reverse();
        const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
        evals = g / denom;
        dirs = Eigen::MatrixXd::Zero(d, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (g(i) > 0.0) dirs.col(i) = x.transpose() * u.col(i) / std::sqrt(g(i));
        }
    }
    const double top = evals.size() ? std::max(evals(0), 0.0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < evals.size(); ++i) {
        if (evals(i) > 1e-10 * top && evals(i) > 1e-300) ++rank;
    }
    if (rank < components) {
        throw Error(ErrorCode::RankDeficient, "corpus rank " + std::to_string(rank) + " < " + std::to_string(components));
    }

    PcaProjection p;
    p.input_dim = static_cast<int>(d);
    p.mean.assign(mean.data(), mean.data() + d);
    for (int c = 0; c < components; ++c) {
        Eigen::VectorXd v = dirs.col(c).normalized();
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        p.components.emplace_back(v.data(), v.data() + d);
        p.variances.push_back(evals(c));
    }
    return p;
}

std::vector<double> pca_project(const std::vector<double>& x, const PcaProjection& pca) {
    if (static_cast<int>(x.size()) != pca.input_dim) throw Error(ErrorCode::DimensionMismatch, "PCA input dim");
    std::vector<double> out(pca.output_dim(), 0.0);
    for (int c = 0; c < pca.output_dim(); ++c) {
        double acc = 0.0;
        for (int j = 0; j < pca.input_dim; ++j) acc += pca.components[c][j] * (x[j] - pca.mean[j]);
        out[c] = acc;
    }
    return out;
}

std::vector<double> pca_reconstruct(const std::vector<double>& phi, const PcaProjection& pca) {
    if (static_cast<int>(phi.size()) != pca.output_dim()) throw Error(ErrorCode::DimensionMismatch, "PCA output dim");
    std::vector<double> out = pca.mean;
    for (int c = 0; c < pca.output_dim(); ++c) {
        for (int j = 0; j < pca.input_dim; ++j) out[j] += phi[c] * pca.components[c][j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoder

CaptionEncoder CaptionEncoder::fit(const std::vector<std::string>& captions, const CaptionEncoderConfig& config) {
    CaptionEncoder enc;
    enc.config_ = config;
    enc.table_ = EmbeddingTable(config.word_dim, config.seed);
    std::vector<WordVecSeq> corpus;
    corpus.reserve(captions.size());
    for (const auto& c : captions) corpus.push_back(enc.table_.embed(tokenize(c)));

    MixtureFitOptions opt;
    opt.num_centers = config.num_centers;
    opt.seed = mix_seed(config.seed + 1);
    enc.mixture_ = fit_hybrid_mixture(corpus, opt).mixture;
    quantize(enc.mixture_, opt.scale_floor);

    std::vector<std::vector<double>> fvs;
    fvs.reserve(corpus.size());
    for (const auto& seq : corpus) fvs.push_back(fisher_vector(seq, enc.mixture_));
    enc.pca_ = pca_fit(fvs, config.embedding_dim);
    for (auto& v : enc.pca_.mean) v = quantize(v);
    for (auto& row : enc.pca_.components) {
        for (auto& v : row) v = quantize(v);
    }
    for (auto& v : enc.pca_.variances) v = quantize(v);
    return enc;
}

std::vector<double> CaptionEncoder::raw_fisher_vector(std::string_view caption) const {
    return fisher_vector(table_.embed(tokenize(caption)), mixture_);
}

CaptionEmbedding CaptionEncoder::encode(std::string_view caption) const {
    const auto proj = pca_project(raw_fisher_vector(caption), pca_);
    CaptionEmbedding e;
    e.phi.assign(proj.begin(), proj.end());
    return e;
}

namespace {

std::vector<float> to_floats(const std::vector<double>& v) { return {v.begin(), v.end()}; }

std::vector<float> flatten(const std::vector<std::vector<double>>& rows) {
    std::vector<float> out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

std::vector<std::vector<double>> unflatten(const BlobArray& a) {
    if (a.shape.size() != 2) throw Error(ErrorCode::CorruptCheckpoint, "'" + a.name + "' is not a matrix");
    std::vector<std::vector<double>> rows(a.shape[0]);
    for (int i = 0; i < a.shape[0]; ++i) {
        rows[i].assign(a.data.begin() + static_cast<std::ptrdiff_t>(i) * a.shape[1],
                       a.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * a.shape[1]);
    }
    return rows;
}

}  // namespace

void CaptionEncoder::append_to(BlobFile& file, const std::string& prefix) const {
    const int k = mixture_.num_centers();
    const int d = mixture_.dim;
    std::vector<float> fam;
    for (auto f : mixture_.family) fam.push_back(static_cast<float>(f));
    file.arrays.push_back({prefix + "mixture.weights", {k}, to_floats(mixture_.weights)});
    file.arrays.push_back({prefix + "mixture.means", {k, d}, flatten(mixture_.means)});
    file.arrays.push_back({prefix + "mixture.scales", {k, d}, flatten(mixture_.scales)});
    file.arrays.push_back({prefix + "mixture.family", {k}, fam});
    file.arrays.push_back({prefix + "pca.mean", {pca_.input_dim}, to_floats(pca_.mean)});
    file.arrays.push_back({prefix + "pca.components", {pca_.output_dim(), pca_.input_dim}, flatten(pca_.components)});
    file.arrays.push_back({prefix + "pca.variances", {pca_.output_dim()}, to_floats(pca_.variances)});

    nlohmann::json meta = {{"word_dim", config_.word_dim},
                           {"num_centers", config_.num_centers},
                           {"embedding_dim", config_.embedding_dim},
                           {"seed", config_.seed}};
    std::vector<std::string> tokens;
    std::vector<std::vector<double>> vecs;
    for (const auto& [tok, v] : table_.explicit_entries()) {
        tokens.push_back(tok);
        vecs.push_back(v);
    }
    meta["table_tokens"] = tokens;
    if (!vecs.empty()) {
        file.arrays.push_back({prefix + "table.vectors", {static_cast<int>(vecs.size()), table_.dim()}, flatten(vecs)});
    }
    file.meta[prefix + "caption_encoder"] = meta;
}

CaptionEncoder CaptionEncoder::read_from(const BlobFile& file, const std::string& prefix) {
    CaptionEncoder enc;
    try {
        const auto& meta = file.meta.at(prefix + "caption_encoder");
        enc.config_.word_dim = meta.at("word_dim").get<int>();
        enc.config_.num_centers = meta.at("num_centers").get<int>();
        enc.config_.embedding_dim = meta.at("embedding_dim").get<int>();
        enc.config_.seed = meta.at("seed").get<std::uint64_t>();
        enc.table_ = EmbeddingTable(enc.config_.word_dim, enc.config_.seed);
        const auto tokens = meta.at("table_tokens").get<std::vector<std::string>>();
        if (!tokens.empty()) {
            const auto vecs = unflatten(file.array(prefix + "table.vectors"));
            for (std::size_t i = 0; i < tokens.size(); ++i) enc.table_.set(tokens[i], vecs.at(i));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptCheckpoint, std::string("caption encoder manifest: ") + e.what());
    }
    const auto& w = file.array(prefix + "mixture.weights");
    enc.mixture_.weights.assign(w.data.begin(), w.data.end());
    enc.mixture_.means = unflatten(file.array(prefix + "mixture.means"));
    enc.mixture_.scales = unflatten(file.array(prefix + "mixture.scales"));
    for (float f : file.array(prefix + "mixture.family").data) {
        enc.mixture_.family.push_back(f != 0.0f ? Family::Laplacian : Family::Gaussian);
    }
    enc.mixture_.dim = enc.config_.word_dim;
    const auto& mean = file.array(prefix + "pca.mean");
    enc.pca_.mean.assign(mean.data.begin(), mean.data.end());
    enc.pca_.input_dim = static_cast<int>(mean.data.size());
    enc.pca_.components = unflatten(file.array(prefix + "pca.components"));
    const auto& var = file.array(prefix + "pca.variances");
    enc.pca_.variances.assign(var.data.begin(), var.data.end());

    const int k = enc.mixture_.num_centers();
    const bool consistent = k == enc.config_.num_centers && static_cast<int>(enc.mixture_.means.size()) == k &&
                            static_cast<int>(enc.mixture_.family.size()) == k &&
                            enc.pca_.input_dim == static_cast<int>(fisher_dim(enc.config_.word_dim, k)) &&
                            enc.pca_.output_dim() == enc.config_.embedding_dim;
    if (!consistent) throw Error(ErrorCode::CorruptCheckpoint, "caption encoder arrays are inconsistent");
    return enc;
}

void CaptionEncoder::save(const std::filesystem::path& path) const {
    BlobFile file;
    file.magic = "CFTC";
    file.version = 1;
    append_to(file, "");
    write_blob_file(path, file);
}

CaptionEncoder CaptionEncoder::load(const std::filesystem::path& path) {
    return read_from(read_blob_file(path, "CFTC", ErrorCode::CorruptCheckpoint), "");
}

// ---------------------------------------------------------------------------
// Conditioning augmentation

ConditionParams::ConditionParams(int phi_dim, int condition_dim, Rng& rng)
    // phi is a projection of a unit-norm Fisher vector, so |phi| <= ~1; a unit
    // init keeps mu(phi) on the same scale as the noise instead of ~50x below it.
    : mu_map(phi_dim, condition_dim, rng, 1.0f), logsigma_map(phi_dim, condition_dim, rng) {}

ConditionParams::Sample ConditionParams::operator()(const ag::Var& phi, const ag::Var& eps) const {
    Sample s;
    s.mu = mu_map(phi);
    s.logsigma = logsigma_map(phi);
    s.c = ag::add(s.mu, ag::mul(ag::exp(s.logsigma), eps));
    return s;
}

void ConditionParams::visit(nn::ParamVisitor& v, const std::string& prefix) {
    mu_map.visit(v, prefix + "mu.");
    logsigma_map.visit(v, prefix + "logsigma.");
}

std::vector<float> condition_augment(const CaptionEmbedding& phi, const ConditionParams& params,
                                     const std::vector<float>& eps) {
    const int c = params.condition_dim();
    if (static_cast<int>(eps.size()) != c || phi.dim() != params.mu_map.in_features()) {
        throw Error(ErrorCode::DimensionMismatch, "condition_augment dims");
    }
    const auto sample = params(ag::Var::constant({1, phi.dim()}, phi.phi), ag::Var::constant({1, c}, eps));
    return {sample.c.value().begin(), sample.c.value().end()};
}

ag::Var condition_kl(const ConditionParams::Sample& s) {
    // 0.5 * (mu^2 + sigma^2 - 1 - 2 log sigma), summed over dims, averaged over batch
    const ag::Var sigma2 = ag::exp(ag::scale(s.logsigma, 2.0f));
    ag::Var terms = ag::add(ag::mul(s.mu, s.mu), sigma2);
    terms = ag::sub(terms, ag::add_scalar(ag::scale(s.logsigma, 2.0f), 1.0f));
    return ag::scale(ag::sum(terms), 0.5f / static_cast<float>(s.mu.dim(0)));
}

}  // namespace cftgan::captions
