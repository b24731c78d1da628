#include "cftgan/eval.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cftgan/checkpoint.hpp"
#include "cftgan/error.hpp"

namespace cftgan::eval {

std::vector<int> uniform_indices(int from, int to) {
    if (to < 1 || to > from) throw Error(ErrorCode::ShapeMismatch, "cannot pick " + std::to_string(to) + " of " +
                                                                      std::to_string(from) + " frames");
    if (to == 1) return {0};
    std::vector<int> idx(to);
    for (int i = 0; i < to; ++i) {
        idx[i] = static_cast<int>(std::lround(static_cast<double>(i) * (from - 1) / (to - 1)));
    }
    return idx;
}

VideoVolume subsample_frames(const VideoVolume& v, int frames) {
    const auto idx = uniform_indices(v.frames, frames);
    VideoVolume out(frames, v.height, v.width);
    for (int c = 0; c < 3; ++c) {
        for (int t = 0; t < frames; ++t) {
            const auto src = v.plane(c, idx[t]);
            std::copy(src.begin(), src.end(), out.plane(c, t).begin());
        }
    }
    return out;
}

namespace {

/// weights[j] lists (source index, weight) pairs averaging source cells into target cell j.
std::vector<std::vector<std::pair<int, double>>> box_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> w(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int j = 0; j < dst; ++j) {
        const double lo = j * ratio;
        const double hi = (j + 1) * ratio;
        for (int i = static_cast<int>(std::floor(lo)); i < src && i < hi; ++i) {
            const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
            if (overlap > 0.0) w[j].emplace_back(i, overlap / ratio);
        }
    }
    return w;
}

}  // namespace

VideoVolume area_downscale(const VideoVolume& v, int height, int width) {
    if (height > v.height || width > v.width || height < 1 || width < 1) {
        throw Error(ErrorCode::ShapeMismatch, "area_downscale only shrinks");
    }
    if (height == v.height && width == v.width) return v;
    const auto wy = box_weights(v.height, height);
    const auto wx = box_weights(v.width, width);
    VideoVolume out(v.frames, height, width);
    for (int c = 0; c < 3; ++c) {
        for (int t = 0; t < v.frames; ++t) {
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    double acc = 0.0;
                    for (const auto& [sy, ay] : wy[y]) {
                        for (const auto& [sx, ax] : wx[x]) acc += ay * ax * v.at(c, t, sy, sx);
                    }
                    out.at(c, t, y, x) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

double rmsd(const VideoVolume& a_in, const VideoVolume& b_in) {
    if (a_in.empty() || b_in.empty()) throw Error(ErrorCode::EmptyVideo, "rmsd of an empty video");
    const int frames = std::min(a_in.frames, b_in.frames);
    const int height = std::min(a_in.height, b_in.height);
    const int width = std::min(a_in.width, b_in.width);
    auto align = [&](const VideoVolume& v) {
        VideoVolume out = v.frames > frames ? subsample_frames(v, frames) : v;
        return area_downscale(out, height, width);
    };
    const VideoVolume a = align(a_in);
    const VideoVolume b = align(b_in);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = (static_cast<double>(a.data[i]) - b.data[i]) * 127.5;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.data.size()));
}

// ---------------------------------------------------------------------------
// Ablation

train::TrainConfig AblationConfig::apply(train::TrainConfig base) const {
    base.zero_caption_flow = tag == 'e';
    base.zero_caption_tex_fg = tag == 'b' || tag == 'c';
    base.zero_caption_tex_bg = tag == 'b' || tag == 'd';
    return base;
}

AblationConfig ablation_config(char tag) {
    switch (tag) {
        case 'a': return {'a', "two-stage model"};
        case 'b': return {'b', "no caption in texture generator"};
        case 'c': return {'c', "no caption in texture foreground"};
        case 'd': return {'d', "no caption in texture background"};
        case 'e': return {'e', "no caption in flow generator"};
        case 'f': return {'f', "single-stage baseline"};
        default: throw Error(ErrorCode::InvalidConfig, std::string("unknown ablation config '") + tag + "'");
    }
}

std::vector<AblationConfig> all_ablation_configs() {
    std::vector<AblationConfig> out;
    for (char t = 'a'; t <= 'f'; ++t) out.push_back(ablation_config(t));
    return out;
}

std::string AblationReport::to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "config,mean_rmsd,std_rmsd,n_captions,n_repeats\n";
    for (const auto& r : rows) {
        os << r.tag << ',' << r.mean_rmsd << ',' << r.std_rmsd << ',' << r.n_captions << ',' << r.n_repeats << '\n';
    }
    return os.str();
}

namespace {

train::TrainState obtain_model(const AblationConfig& cfg, const train::TrainConfig& base,
                               const train::TrainingSet& set, const captions::CaptionEncoder& encoder,
                               const AblationOptions& opt) {
    std::optional<std::filesystem::path> model_path;
    if (opt.models_dir) {
        model_path = *opt.models_dir / (std::string(1, cfg.tag) + ".cftk");
        if (std::filesystem::exists(*model_path)) {
            train::TrainState s = train::load_checkpoint(*model_path);
            if (s.kind != cfg.model() || s.config != cfg.apply(s.config)) {
                throw Error(ErrorCode::MissingModel, model_path->string() + " was trained for another configuration");
            }
            return s;
        }
        if (!opt.train_missing) throw Error(ErrorCode::MissingModel, "no model at " + model_path->string());
    }
    train::TrainConfig tc = cfg.apply(base);
    tc.iterations = opt.budget;
    tc.seed = opt.seed;
    train::TrainState state = train::TrainState::create(tc, cfg.model(), encoder);
    const auto start = std::chrono::steady_clock::now();
    while (state.k < tc.iterations) {
        train::train_iteration(state, set);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (opt.max_seconds > 0.0 && elapsed > opt.max_seconds && state.k < tc.iterations) {
            throw Error(ErrorCode::BudgetExceeded, std::string("config ") + cfg.tag + " exceeded " +
                                                       std::to_string(opt.max_seconds) + " s after " +
                                                       std::to_string(state.k) + " iterations");
        }
    }
    if (model_path) train::save_checkpoint(state, *model_path);
    return state;
}

}  // namespace

AblationReport run_ablation(const std::vector<AblationConfig>& configs, const train::TrainConfig& base,
                            const std::vector<data::ClipSample>& dataset, const captions::CaptionEncoder& encoder,
                            const AblationOptions& opt) {
    if (opt.n_captions < 1 || opt.n_repeats < 1) throw Error(ErrorCode::InvalidConfig, "n_captions and n_repeats must be >= 1");
    // First clip bearing each distinct caption, in dataset order.
    std::vector<std::size_t> by_caption;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (seen.insert(dataset[i].caption).second) by_caption.push_back(i);
    }
    if (static_cast<int>(by_caption.size()) < opt.n_captions) {
        throw Error(ErrorCode::InvalidConfig, "dataset has " + std::to_string(by_caption.size()) +
                                                  " distinct captions, protocol needs " + std::to_string(opt.n_captions));
    }
    const train::TrainingSet set = train::TrainingSet::build(dataset, encoder);

    AblationReport report;
    for (const auto& cfg : configs) {
        train::TrainState state = obtain_model(cfg, base, set, encoder, opt);
        std::vector<double> repeat_means;
        for (int r = 0; r < opt.n_repeats; ++r) {
            Rng pick(mix_seed(opt.seed ^ mix_seed(0x5eed0000ULL + static_cast<std::uint64_t>(r))));
            std::vector<std::size_t> pool = by_caption;
            double acc = 0.0;
            for (int i = 0; i < opt.n_captions; ++i) {
                const auto j = i + static_cast<std::size_t>(pick.below(pool.size() - i));
                std::swap(pool[i], pool[j]);
                const auto& clip = dataset[pool[i]];
                Rng noise(mix_seed(pick.next_u64()));
                const auto sample = train::sample_clip(state, set.phi[pool[i]], noise);
                acc += rmsd(sample.video, clip.video);
            }
            repeat_means.push_back(acc / opt.n_captions);
        }
        AblationRow row{cfg.tag, 0.0, 0.0, opt.n_captions, opt.n_repeats};
        row.mean_rmsd = std::accumulate(repeat_means.begin(), repeat_means.end(), 0.0) / repeat_means.size();
        if (repeat_means.size() > 1) {
            double ss = 0.0;
            for (double m : repeat_means) ss += (m - row.mean_rmsd) * (m - row.mean_rmsd);
            row.std_rmsd = std::sqrt(ss / static_cast<double>(repeat_means.size() - 1));
        }
        report.rows.push_back(row);
    }
    return report;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream os(path);
    os << text;
    if (!os) throw Error(ErrorCode::IOFailure, "failed writing " + path.string());
}

RgbImage frame_strip(const VideoVolume& v) {
    const int n = (v.frames + 3) / 4;
    RgbImage strip{v.width * n, v.height, {}};
    strip.pixels.resize(static_cast<std::size_t>(strip.width) * strip.height * 3);
    for (int k = 0; k < n; ++k) {
        const RgbImage f = video_frame(v, 4 * k);
        for (int y = 0; y < v.height; ++y) {
            std::copy_n(f.pixels.begin() + static_cast<std::ptrdiff_t>(y) * v.width * 3, v.width * 3,
                        strip.pixels.begin() + (static_cast<std::ptrdiff_t>(y) * strip.width + k * v.width) * 3);
        }
    }
    return strip;
}

void export_samples(const std::vector<VideoVolume>& videos, const std::vector<std::string>& captions,
                    const std::filesystem::path& dir) {
    if (videos.size() != captions.size()) throw Error(ErrorCode::ShapeMismatch, "one caption per video");
    if (videos.empty()) return;
    for (const auto& v : videos) {
        if (!v.same_shape(videos.front())) throw Error(ErrorCode::ShapeMismatch, "exported videos must share dims");
    }
    std::ostringstream sidecar;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%03zu.png", i);
        write_png(dir / name, frame_strip(videos[i]));
        sidecar << name << '\t' << captions[i] << '\n';
    }
    write_text(dir / "captions.txt", sidecar.str());
}

}  // namespace cftgan::eval
