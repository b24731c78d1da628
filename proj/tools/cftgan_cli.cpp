// Command-line entry point: synthesize-data, train, generate, evaluate, ablate.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "cftgan/checkpoint.hpp"
#include "cftgan/error.hpp"
#include "cftgan/eval.hpp"
#include "cftgan/image_io.hpp"
#include "cftgan/run_config.hpp"

namespace fs = std::filesystem;
using namespace cftgan;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidIteration:
            return kExitUsage;
        case ErrorCode::NonFiniteLoss:
        case ErrorCode::BudgetExceeded:
            return kExitNumeric;
        default:
            return kExitData;
    }
}

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string scale;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "key = value config file");
    cmd->add_option("--set", o.overrides, "key=value override (repeatable)");
    cmd->add_option("--scale", o.scale, "preset: toy or paper");
    cmd->add_option("--seed", o.seed, "random seed");
}

RunConfig resolve(const CommonOptions& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (!o.scale.empty()) {
        // A preset chosen on the command line sits below the file's other keys.
        RunConfig base = RunConfig::preset(o.scale);
        if (!o.config_path.empty()) {
            std::ifstream is(o.config_path);
            std::ostringstream ss;
            ss << is.rdbuf();
            base = parse_run_config("scale = " + o.scale + "\n" + ss.str());
        }
        c = base;
    }
    for (const auto& kv : o.overrides) apply_override(c, kv);
    if (o.seed) {
        c.train.seed = *o.seed;
        c.data_seed = *o.seed;
    }
    c.validate();
    return c;
}

void write_effective(const fs::path& dir, const RunConfig& c) {
    eval::write_text(dir / "effective_config.txt", c.to_text());
}

std::string shortest(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

// ---------------------------------------------------------------------------

int cmd_synthesize(const CommonOptions& common, const fs::path& out) {
    const RunConfig c = resolve(common);
    const auto specs = data::default_grid(c.data);
    data::write_corpus(out, data::synthesize_corpus(specs, c.data_seed));
    write_effective(out, c);
    std::cout << "wrote " << specs.size() << " clips to " << out.string() << '\n';
    return 0;
}

captions::CaptionEncoder fit_encoder(const RunConfig& c, const std::vector<std::string>& captions) {
    captions::CaptionEncoderConfig ec;
    ec.word_dim = c.train.word_dim;
    ec.num_centers = c.train.mixture_centers;
    ec.embedding_dim = c.train.dims.phi_dim;
    ec.seed = c.train.seed;
    return captions::CaptionEncoder::fit(captions, ec);
}

std::vector<data::ClipSample> load_training_clips(const RunConfig& c, const fs::path& root, data::DatasetIndex* out) {
    data::DatasetIndex index = data::load_dataset(root, c.data.clip_len, c.val_every);
    for (const auto& w : index.warnings) std::cerr << "warning: skipped " << w << '\n';
    std::vector<data::ClipSample> clips;
    const auto all = data::load_clips(index, c.data.canvas);
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (index.entries[i].split == data::Split::Train) clips.push_back(all[i]);
    }
    if (out) *out = std::move(index);
    return clips;
}

int cmd_train(const CommonOptions& common, const fs::path& data_root, const fs::path& out, const std::string& resume,
              const std::string& model) {
    RunConfig c = resolve(common);
    if (!model.empty()) c.set("model", model);
    if (c.scale == "paper") {
        std::cout << "plan: K=" << c.train.iterations << " iterations, batch " << c.train.batch_size << ", "
                  << c.train.dims.frames << "x" << c.train.dims.height << "x" << c.train.dims.width
                  << ", lr " << c.train.lr0 << " halved every " << c.train.lr_halving_period << '\n';
    }
    const auto clips = load_training_clips(c, data_root, nullptr);

    train::TrainState state;
    if (!resume.empty()) {
        state = train::load_checkpoint(resume);
        if (train::to_string(state.kind) != c.model) {
            std::cerr << "note: resuming a " << train::to_string(state.kind) << " checkpoint\n";
        }
        if (!(state.config == c.train)) std::cerr << "note: using the configuration stored in the checkpoint\n";
        c.train = state.config;
        c.model = train::to_string(state.kind);
    } else {
        std::vector<std::string> caps;
        for (const auto& clip : clips) caps.push_back(clip.caption);
        state = train::TrainState::create(c.train, train::model_kind_from(c.model), fit_encoder(c, caps));
    }
    const train::TrainingSet set = train::TrainingSet::build(clips, state.encoder);

    fs::create_directories(out);
    write_effective(out, c);
    const fs::path csv_path = out / "loss.csv";
    const bool append = !resume.empty() && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw Error(ErrorCode::IOFailure, "cannot write " + csv_path.string());
    if (!append) csv << train::loss_csv_header() << '\n';

    while (state.k < state.config.iterations) {
        const auto rec = train::train_iteration(state, set);
        csv << train::loss_csv_row(rec) << '\n';
        if (state.k % c.checkpoint_every == 0 && state.k < state.config.iterations) {
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_%06lld.cftk", static_cast<long long>(state.k));
            train::save_checkpoint(state, out / name);
        }
    }
    csv.flush();
    train::save_checkpoint(state, out / "final.cftk");
    std::cout << "trained to iteration " << state.k << "; checkpoint " << (out / "final.cftk").string() << '\n';
    return 0;
}

int cmd_generate(const fs::path& checkpoint, const std::string& caption, std::uint64_t seed, const fs::path& out) {
    train::TrainState state = train::load_checkpoint(checkpoint);
    const auto phi = state.encoder.encode(caption);
    Rng rng(mix_seed(seed));
    const auto sample = train::sample_clip(state, phi.phi, rng);
    data::ClipSample clip{sample.video, sample.flow, caption};
    fs::create_directories(out);
    for (int t = 0; t < clip.video.frames; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "%06d.png", t);
        write_png(out / "frames" / name, video_frame(clip.video, t));
    }
    if (!clip.flow.empty()) data::write_flow(out / "flow.cff", clip.flow);
    write_png(out / "strip.png", eval::frame_strip(clip.video));
    eval::write_text(out / "caption.txt", caption + "\n");
    RunConfig c;
    c.train = state.config;
    c.model = train::to_string(state.kind);
    c.data.crop = c.train.dims.height;
    c.data.clip_len = c.train.dims.frames;
    c.scale = c.train.dims == ModelDims::paper() ? "paper" : "toy";
    write_effective(out, c);
    std::cout << "wrote " << clip.video.frames << " frames to " << out.string() << '\n';
    return 0;
}

/// A clip directory (frames/ subdir), a directory of PNG frames, or one PNG.
VideoVolume read_video(const fs::path& p) {
    if (!fs::exists(p)) throw Error(ErrorCode::IOFailure, p.string() + " does not exist");
    std::vector<fs::path> frames;
    if (fs::is_directory(p)) {
        const fs::path dir = fs::is_directory(p / "frames") ? p / "frames" : p;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.path().extension() == ".png") frames.push_back(e.path());
        }
        std::sort(frames.begin(), frames.end());
    } else {
        frames.push_back(p);
    }
    if (frames.empty()) throw Error(ErrorCode::EmptyVideo, "no frames in " + p.string());
    VideoVolume v;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const RgbImage img = read_png(frames[t]);
        if (t == 0) v = VideoVolume(static_cast<int>(frames.size()), img.height, img.width);
        set_video_frame(v, static_cast<int>(t), img);
    }
    return v;
}

int cmd_evaluate(const fs::path& a, const fs::path& b) {
    std::cout << shortest(eval::rmsd(read_video(a), read_video(b))) << '\n';
    return 0;
}

int cmd_ablate(const CommonOptions& common, const fs::path& data_root, const fs::path& out_csv,
               const std::string& models_dir, bool train_missing) {
    const RunConfig c = resolve(common);
    const auto clips = load_training_clips(c, data_root, nullptr);
    std::vector<std::string> caps;
    for (const auto& clip : clips) caps.push_back(clip.caption);
    const auto encoder = fit_encoder(c, caps);

    std::vector<eval::AblationConfig> configs;
    for (char t : c.configs) configs.push_back(eval::ablation_config(t));
    eval::AblationOptions opt;
    opt.n_captions = c.n_captions;
    opt.n_repeats = c.n_repeats;
    opt.budget = c.budget;
    opt.max_seconds = c.max_seconds;
    opt.seed = c.train.seed;
    if (!models_dir.empty()) opt.models_dir = models_dir;
    opt.train_missing = train_missing;
    const auto report = eval::run_ablation(configs, c.train, clips, encoder, opt);
    eval::write_text(out_csv, report.to_csv());
    write_effective(out_csv.has_parent_path() ? out_csv.parent_path() : fs::path("."), c);
    std::cout << report.to_csv();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* det = std::getenv("CFTGAN_DETERMINISTIC"); det && std::string(det) == "1") {
        // Everything already runs on one thread; the flag pins that for future parallel paths.
        Eigen::setNbThreads(1);
    }

    CLI::App app{"Caption-conditioned two-stage video GAN"};
    app.require_subcommand(1);

    CommonOptions synth_common, train_common, ablate_common;
    std::string synth_out;
    auto* synth = app.add_subcommand("synthesize-data", "write the synthetic captioned corpus");
    add_common(synth, synth_common);
    synth->add_option("--out", synth_out, "corpus root")->required();

    std::string train_data, train_out, train_resume, train_model;
    auto* trn = app.add_subcommand("train", "train a model");
    add_common(trn, train_common);
    trn->add_option("--data", train_data, "corpus root")->required();
    trn->add_option("--out", train_out, "output directory")->required();
    trn->add_option("--resume", train_resume, "checkpoint to resume from");
    trn->add_option("--model", train_model, "cftgan or cvgan")->check(CLI::IsMember({"cftgan", "cvgan"}));

    std::string gen_ckpt, gen_caption, gen_out;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("generate", "generate a video for a caption");
    gen->add_option("--checkpoint", gen_ckpt, "trained checkpoint")->required();
    gen->add_option("--caption", gen_caption, "caption text")->required();
    gen->add_option("--seed", gen_seed, "noise seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    std::string eval_a, eval_b;
    auto* evl = app.add_subcommand("evaluate", "RMSD between two videos");
    evl->add_option("--a", eval_a, "clip directory, frame directory or PNG")->required();
    evl->add_option("--b", eval_b, "clip directory, frame directory or PNG")->required();

    std::string abl_data, abl_out, abl_models, abl_configs;
    std::optional<std::int64_t> abl_budget;
    std::optional<int> abl_captions, abl_repeats;
    std::optional<double> abl_seconds;
    bool abl_train_missing = false;
    auto* abl = app.add_subcommand("ablate", "run the ablation protocol");
    add_common(abl, ablate_common);
    abl->add_option("--data", abl_data, "corpus root")->required();
    abl->add_option("--out", abl_out, "report CSV path")->required();
    abl->add_option("--configs", abl_configs, "comma-separated tags from a-f");
    abl->add_option("--budget", abl_budget, "training iterations per config");
    abl->add_option("--n-captions", abl_captions, "captions per repeat");
    abl->add_option("--n-repeats", abl_repeats, "repeats");
    abl->add_option("--max-seconds", abl_seconds, "training wall-clock limit per config");
    abl->add_option("--models", abl_models, "directory of pre-trained <tag>.cftk models");
    abl->add_flag("--train-missing", abl_train_missing, "train and save models missing from --models");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) return cmd_synthesize(synth_common, synth_out);
        if (*trn) return cmd_train(train_common, train_data, train_out, train_resume, train_model);
        if (*gen) return cmd_generate(gen_ckpt, gen_caption, gen_seed, gen_out);
        if (*evl) return cmd_evaluate(eval_a, eval_b);
        if (*abl) {
            if (!abl_configs.empty()) ablate_common.overrides.push_back("configs=" + abl_configs);
            if (abl_budget) ablate_common.overrides.push_back("budget=" + std::to_string(*abl_budget));
            if (abl_captions) ablate_common.overrides.push_back("n_captions=" + std::to_string(*abl_captions));
            if (abl_repeats) ablate_common.overrides.push_back("n_repeats=" + std::to_string(*abl_repeats));
            if (abl_seconds) ablate_common.overrides.push_back("max_seconds=" + shortest(*abl_seconds));
            return cmd_ablate(ablate_common, abl_data, abl_out, abl_models, abl_train_missing);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: IOFailure: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
