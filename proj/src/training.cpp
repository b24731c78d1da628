#include "cftgan/training.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "cftgan/error.hpp"

namespace cftgan::train {

using ag::Var;

std::string to_string(ModelKind k) { return k == ModelKind::CftGan ? "cftgan" : "cvgan"; }

ModelKind model_kind_from(const std::string& s) {
    if (s == "cftgan") return ModelKind::CftGan;
    if (s == "cvgan") return ModelKind::CvGan;
    throw Error(ErrorCode::InvalidConfig, "unknown model '" + s + "' (expected cftgan or cvgan)");
}

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.dims = ModelDims::paper();
    c.lr0 = 2e-4f;
    c.iterations = 60000;
    c.batch_size = 32;
    c.word_dim = 300;
    c.mixture_centers = 30;
    return c;
}

// ---------------------------------------------------------------------------
// Key/value form

namespace {

std::string format(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string format(float v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw Error(ErrorCode::InvalidConfig, "bad value '" + value + "' for key '" + key + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = first + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) bad_value(key, value);
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    bad_value(key, value);
}

}  // namespace

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
    const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"frames", std::to_string(c.dims.frames)},
        {"height", std::to_string(c.dims.height)},
        {"width", std::to_string(c.dims.width)},
        {"z_dim", std::to_string(c.dims.z_dim)},
        {"c_dim", std::to_string(c.dims.c_dim)},
        {"phi_dim", std::to_string(c.dims.phi_dim)},
        {"cap_dim", std::to_string(c.dims.cap_dim)},
        {"base_width", std::to_string(c.dims.base_width)},
        {"flow_cap", format(c.dims.flow_cap)},
        {"iterations", std::to_string(c.iterations)},
        {"batch_size", std::to_string(c.batch_size)},
        {"lr0", format(c.lr0)},
        {"beta1", format(c.beta1)},
        {"beta2", format(c.beta2)},
        {"adam_eps", format(c.adam_eps)},
        {"lr_halving_period", std::to_string(c.lr_halving_period)},
        {"mask_l1", b(c.mask_l1)},
        {"lambda_mask", format(c.lambda_mask)},
        {"ca_kl_weight", format(c.ca_kl_weight)},
        {"non_saturating", b(c.non_saturating)},
        {"log_eps", format(c.log_eps)},
        {"seed", std::to_string(c.seed)},
        {"shared_condition", b(c.shared_condition)},
        {"zero_caption_flow", b(c.zero_caption_flow)},
        {"zero_caption_tex_fg", b(c.zero_caption_tex_fg)},
        {"zero_caption_tex_bg", b(c.zero_caption_tex_bg)},
        {"word_dim", std::to_string(c.word_dim)},
        {"mixture_centers", std::to_string(c.mixture_centers)},
    };
}

bool apply_key_value(TrainConfig& c, const std::string& key, const std::string& value) {
    auto i32 = [&](int& dst) { dst = parse_number<int>(key, value); };
    auto i64 = [&](std::int64_t& dst) { dst = parse_number<std::int64_t>(key, value); };
    auto f32 = [&](float& dst) { dst = parse_number<float>(key, value); };
    auto flag = [&](bool& dst) { dst = parse_bool(key, value); };
    if (key == "frames") i32(c.dims.frames);
    else if (key == "height") i32(c.dims.height);
    else if (key == "width") i32(c.dims.width);
    else if (key == "z_dim") i32(c.dims.z_dim);
    else if (key == "c_dim") i32(c.dims.c_dim);
    else if (key == "phi_dim") i32(c.dims.phi_dim);
    else if (key == "cap_dim") i32(c.dims.cap_dim);
    else if (key == "base_width") i32(c.dims.base_width);
    else if (key == "flow_cap") f32(c.dims.flow_cap);
    else if (key == "iterations") i64(c.iterations);
    else if (key == "batch_size") i32(c.batch_size);
    else if (key == "lr0") f32(c.lr0);
    else if (key == "beta1") f32(c.beta1);
    else if (key == "beta2") f32(c.beta2);
    else if (key == "adam_eps") f32(c.adam_eps);
    else if (key == "lr_halving_period") i64(c.lr_halving_period);
    else if (key == "mask_l1") flag(c.mask_l1);
    else if (key == "lambda_mask") f32(c.lambda_mask);
    else if (key == "ca_kl_weight") f32(c.ca_kl_weight);
    else if (key == "non_saturating") flag(c.non_saturating);
    else if (key == "log_eps") f32(c.log_eps);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "shared_condition") flag(c.shared_condition);
    else if (key == "zero_caption_flow") flag(c.zero_caption_flow);
    else if (key == "zero_caption_tex_fg") flag(c.zero_caption_tex_fg);
    else if (key == "zero_caption_tex_bg") flag(c.zero_caption_tex_bg);
    else if (key == "word_dim") i32(c.word_dim);
    else if (key == "mixture_centers") i32(c.mixture_centers);
    else return false;
    return true;
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [k, v] : kv) {
        if (!apply_key_value(c, k, v)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + k + "'");
    }
    return c;
}

std::uint64_t config_hash(const TrainConfig& c) {
    std::string text;
    for (const auto& [k, v] : to_key_values(c)) text += k + "=" + v + "\n";
    return stable_hash(text);
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw Error(ErrorCode::InvalidConfig, what);
    };
    require(iterations > 0, "iterations must be > 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(lr0 > 0.0f, "lr0 must be > 0");
    require(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f, "Adam betas must be in [0, 1)");
    require(adam_eps > 0.0f && log_eps > 0.0f, "epsilons must be > 0");
    require(lr_halving_period > 0, "lr_halving_period must be > 0");
    require(lambda_mask >= 0.0f && ca_kl_weight >= 0.0f, "loss weights must be >= 0");
    require(dims.z_dim > 0 && dims.c_dim > 0 && dims.phi_dim > 0 && dims.cap_dim > 0 && dims.base_width > 0,
            "network widths must be > 0");
    require(dims.flow_cap > 0.0f, "flow_cap must be > 0");
    require(word_dim > 0 && mixture_centers > 0, "caption encoder sizes must be > 0");
    try {
        nn::plan_upsampling(dims.volume(), ModelDims::kBlocks);
        nn::plan_upsampling({1, dims.height, dims.width}, ModelDims::kBlocks);
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("volume dims: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Schedule and losses

double schedule_weight(std::int64_t k, std::int64_t K) {
    if (K <= 0 || k < 0 || k > K) {
        throw Error(ErrorCode::InvalidIteration,
                    "iteration " + std::to_string(k) + " outside [0, " + std::to_string(K) + "]");
    }
    return static_cast<double>(k) / static_cast<double>(K);
}

double lr_at(std::int64_t iteration, const TrainConfig& c) {
    return static_cast<double>(c.lr0) * std::pow(0.5, static_cast<double>(iteration / c.lr_halving_period));
}

namespace {

Var mean_log(const Var& d, float eps) { return ag::mean(ag::clamped_log(d, eps)); }
Var mean_log1m(const Var& d, float eps) { return ag::mean(ag::clamped_log(ag::one_minus(d), eps)); }
Var generator_term(const Var& d, float eps, bool ns) {
    return ns ? ag::scale(mean_log(d, eps), -1.0f) : mean_log1m(d, eps);
}

}  // namespace

Var loss_d_flow(const Var& d_real, const Var& d_fake, float eps) {
    return ag::add(mean_log(d_real, eps), mean_log1m(d_fake, eps));
}

Var loss_g_flow(const Var& d_flow_fake, const Var& d_tex_fake, double r, float eps, bool ns) {
    return ag::add(generator_term(d_flow_fake, eps, ns),
                   ag::scale(generator_term(d_tex_fake, eps, ns), static_cast<float>(r)));
}

Var loss_d_tex(const Var& d_real, const Var& d_fake_real_flow, const Var& d_fake_gen_flow, double r, float eps) {
    return ag::add(ag::add(mean_log(d_real, eps), ag::scale(mean_log1m(d_fake_real_flow, eps), static_cast<float>(1.0 - r))),
                   ag::scale(mean_log1m(d_fake_gen_flow, eps), static_cast<float>(r)));
}

Var loss_g_tex(const Var& d_fake_real_flow, const Var& d_fake_gen_flow, double r, float eps, bool ns) {
    return ag::add(ag::scale(generator_term(d_fake_real_flow, eps, ns), static_cast<float>(1.0 - r)),
                   ag::scale(generator_term(d_fake_gen_flow, eps, ns), static_cast<float>(r)));
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(const std::vector<nn::NamedParam>& params, double lr, const TrainConfig& c) {
    if (m.size() != params.size()) {
        m.resize(params.size());
        v.resize(params.size());
    }
    ++t;
    const double b1 = c.beta1;
    const double b2 = c.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Var& p = *params[i].var;
        auto value = p.mutable_value();
        const auto grad = p.grad();
        if (m[i].size() != value.size()) {
            m[i].assign(value.size(), 0.0f);
            v[i].assign(value.size(), 0.0f);
        }
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            const double mj = b1 * m[i][j] + (1.0 - b1) * g;
            const double vj = b2 * v[i][j] + (1.0 - b2) * g * g;
            m[i][j] = static_cast<float>(mj);
            v[i][j] = static_cast<float>(vj);
            value[j] -= static_cast<float>(lr * (mj / corr1) / (std::sqrt(vj / corr2) + c.adam_eps));
        }
    }
}

// ---------------------------------------------------------------------------
// State

TrainState TrainState::create(const TrainConfig& config, ModelKind kind, captions::CaptionEncoder encoder) {
    config.validate();
    if (encoder.embedding_dim() != config.dims.phi_dim) {
        throw Error(ErrorCode::DimensionMismatch, "caption embedding dim " + std::to_string(encoder.embedding_dim()) +
                                                      " != phi_dim " + std::to_string(config.dims.phi_dim));
    }
    TrainState s;
    s.config = config;
    s.kind = kind;
    s.encoder = std::move(encoder);
    s.rng = Rng(mix_seed(config.seed ^ 0x7261696eULL));
    Rng init(mix_seed(config.seed ^ 0x696e6974ULL));
    if (kind == ModelKind::CftGan) {
        CftGanNets n;
        n.g_flow = FlowGenerator(config.dims, init);
        n.d_flow = FlowDiscriminator(config.dims, init);
        n.g_tex = TextureGenerator(config.dims, init);
        n.d_tex = TextureDiscriminator(config.dims, init);
        s.cft = std::move(n);
    } else {
        CvGanNets n;
        n.gen = CvGenerator(config.dims, init);
        n.disc = CvDiscriminator(config.dims, init);
        s.cv = std::move(n);
    }
    s.for_each_network([&](const std::string& name, auto&) { s.adam[name] = Adam{}; });
    s.apply_flags();
    return s;
}

TrainState TrainState::clone() const {
    TrainState copy = *this;
    copy.for_each_network([](const std::string&, auto& net) { nn::detach_storage(net); });
    return copy;
}

void TrainState::apply_flags() {
    if (cft) {
        cft->g_flow.zero_caption = config.zero_caption_flow;
        cft->g_tex.zero_caption_foreground = config.zero_caption_tex_fg;
        cft->g_tex.zero_caption_background = config.zero_caption_tex_bg;
    }
}

TrainingSet TrainingSet::build(std::vector<data::ClipSample> clips, const captions::CaptionEncoder& encoder) {
    if (clips.empty()) throw Error(ErrorCode::EmptyDataset, "no clips to train on");
    TrainingSet set;
    for (const auto& c : clips) set.phi.push_back(encoder.encode(c.caption).phi);
    set.clips = std::move(clips);
    return set;
}

Batch draw_batch(TrainState& state, const TrainingSet& set) {
    if (set.clips.empty()) throw Error(ErrorCode::EmptyDataset, "no clips to train on");
    const auto& d = state.config.dims;
    if (d.height != d.width) throw Error(ErrorCode::ShapeMismatch, "square crops require height == width");
    Batch b;
    for (int i = 0; i < state.config.batch_size; ++i) {
        const auto idx = static_cast<std::size_t>(state.rng.below(set.clips.size()));
        b.clips.push_back(data::augment_clip(set.clips[idx], d.height, d.frames, state.rng));
        b.phi.push_back(set.phi[idx]);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Iteration

namespace {

Var normal_rows(Rng& rng, int n, int d) {
    std::vector<float> v(static_cast<std::size_t>(n) * d);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Var::constant({n, d}, std::move(v));
}

std::vector<float> values(const Var& x) { return {x.value().begin(), x.value().end()}; }

double checked(const Var& loss, const char* what) {
    const double v = loss.item();
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, std::string(what) + " is not finite");
    return v;
}

template <class Net>
void capture_grads(GradientCapture* capture, const std::string& name, Net& net) {
    if (!capture) return;
    auto& out = capture->networks[name];
    out.clear();
    for (auto& p : nn::parameters(net)) {
        const auto g = p.var->grad();
        out.push_back({p.name, p.var->shape(), {g.begin(), g.end()}});
    }
}

struct Inputs {
    int n = 0;
    Var phi;
    Var real_flow;
    Var real_video;
};

Inputs pack_batch(const Batch& batch, const ModelDims& d, int batch_size) {
    if (static_cast<int>(batch.clips.size()) != batch_size || batch.phi.size() != batch.clips.size()) {
        throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.clips.size()) +
                                                  " clips, config expects " + std::to_string(batch_size));
    }
    std::vector<const std::vector<float>*> flows;
    std::vector<const std::vector<float>*> videos;
    for (const auto& c : batch.clips) {
        require_shape(c.video, 3, d.frames, d.height, d.width, "batch video");
        require_shape(c.flow, 2, d.frames, d.height, d.width, "batch flow");
        flows.push_back(&c.flow.data);
        videos.push_back(&c.video.data);
    }
    Inputs in;
    in.n = batch_size;
    in.phi = nn::pack_rows(batch.phi);
    in.real_flow = nn::pack_volumes(flows, 2, d.frames, d.height, d.width);
    in.real_video = nn::pack_volumes(videos, 3, d.frames, d.height, d.width);
    return in;
}

class CftStep {
public:
    CftStep(TrainState& s, const Inputs& in, GradientCapture* capture)
        : s_(s), n_(s.cft.value()), in_(in), c_(s.config), capture_(capture) {}

    LossRecord run() {
        rec_.iter = s_.k;
        rec_.r = schedule_weight(s_.k, c_.iterations);
        rec_.lr = lr_at(s_.k, c_);
        update_d_flow();
        update_d_tex();
        update_g_flow();
        update_g_tex();
        return rec_;
    }

private:
    struct Sampled {
        Var c;
        captions::ConditionParams::Sample cond;
    };

    Sampled condition(captions::ConditionParams& params) {
        Sampled out;
        out.cond = params(in_.phi, normal_rows(s_.rng, in_.n, c_.dims.c_dim));
        out.c = out.cond.c;
        return out;
    }
    captions::ConditionParams& tex_cond() { return c_.shared_condition ? n_.g_flow.cond : n_.g_tex.cond; }
    Var z() { return normal_rows(s_.rng, in_.n, c_.dims.z_dim); }

    FlowGenOutput gen_flow(Sampled* keep = nullptr) {
        Var zf = z();
        Sampled sc = condition(n_.g_flow.cond);
        if (keep) *keep = sc;
        return n_.g_flow(zf, sc.c, true);
    }
    TexGenOutput gen_tex(const Var& flow, Sampled* keep = nullptr) {
        Var zt = z();
        Sampled sc = condition(tex_cond());
        if (keep) *keep = sc;
        return n_.g_tex(zt, sc.c, flow, true);
    }

    void zero_all() {
        s_.for_each_network([](const std::string&, auto& net) { nn::zero_grad(net); });
    }

    template <class Net>
    void apply(const std::string& name, Net& net, const Var& objective) {
        zero_all();
        ag::backward(objective);
        capture_grads(capture_, name, net);
        s_.adam[name].step(nn::parameters(net), rec_.lr, c_);
        zero_all();
    }

    Var kl_term(const Sampled& a, const Sampled& b) {
        return ag::scale(ag::add(captions::condition_kl(a.cond), captions::condition_kl(b.cond)), 0.5f);
    }

    void update_d_flow() {
        const Var fake = gen_flow().flow.detach();
        const Var d_real = n_.d_flow(in_.real_flow, in_.phi, true);
        const Var d_fake = n_.d_flow(fake, in_.phi, true);
        const Var loss = loss_d_flow(d_real, d_fake, c_.log_eps);
        rec_.ld_flow = checked(loss, "L_D_flow");
        rec_.d.df_real = values(d_real);
        rec_.d.df_fake = values(d_fake);
        apply("d_flow", n_.d_flow, ag::scale(loss, -1.0f));
    }

    void update_d_tex() {
        const Var fake_rf = gen_tex(in_.real_flow).video.detach();
        const Var gflow = gen_flow().flow.detach();
        const Var fake_gf = gen_tex(gflow).video.detach();
        const Var d_real = n_.d_tex(in_.real_video, in_.real_flow, in_.phi, true);
        const Var d_rf = n_.d_tex(fake_rf, in_.real_flow, in_.phi, true);
        const Var d_gf = n_.d_tex(fake_gf, gflow, in_.phi, true);
        const Var loss = loss_d_tex(d_real, d_rf, d_gf, rec_.r, c_.log_eps);
        rec_.ld_tex = checked(loss, "L_D_tex");
        rec_.d.dt_real = values(d_real);
        rec_.d.dt_fake_real_flow = values(d_rf);
        rec_.d.dt_fake_gen_flow = values(d_gf);
        apply("d_tex", n_.d_tex, ag::scale(loss, -1.0f));
    }

    void update_g_flow() {
        Sampled sf, st;
        const FlowGenOutput g = gen_flow(&sf);
        const Var d_f = n_.d_flow(g.flow, in_.phi, true);
        const TexGenOutput t = gen_tex(g.flow, &st);
        const Var d_t = n_.d_tex(t.video, g.flow, in_.phi, true);
        const Var loss = loss_g_flow(d_f, d_t, rec_.r, c_.log_eps, c_.non_saturating);
        rec_.lg_flow = checked(loss, "L_G_flow");
        rec_.d.gf_d_flow = values(d_f);
        rec_.d.gf_d_tex = values(d_t);
        Var objective = loss;
        if (c_.ca_kl_weight > 0.0f) objective = ag::add(objective, ag::scale(captions::condition_kl(sf.cond), c_.ca_kl_weight));
        checked(objective, "G_flow objective");
        // G_tex is frozen here: only G_flow takes a step on this objective.
        apply("g_flow", n_.g_flow, objective);
    }

    void update_g_tex() {
        Sampled s1, s2;
        const TexGenOutput t_rf = gen_tex(in_.real_flow, &s1);
        const Var gflow = gen_flow().flow.detach();
        const TexGenOutput t_gf = gen_tex(gflow, &s2);
        const Var d_rf = n_.d_tex(t_rf.video, in_.real_flow, in_.phi, true);
        const Var d_gf = n_.d_tex(t_gf.video, gflow, in_.phi, true);
        const Var loss = loss_g_tex(d_rf, d_gf, rec_.r, c_.log_eps, c_.non_saturating);
        rec_.lg_tex = checked(loss, "L_G_tex");
        rec_.d.gt_fake_real_flow = values(d_rf);
        rec_.d.gt_fake_gen_flow = values(d_gf);
        Var objective = loss;
        const Var mask_l1 = ag::scale(ag::add(ag::mean(ag::abs(t_rf.mask)), ag::mean(ag::abs(t_gf.mask))), 0.5f);
        rec_.mask_l1 = mask_l1.item();
        if (c_.mask_l1) objective = ag::add(objective, ag::scale(mask_l1, c_.lambda_mask));
        if (c_.ca_kl_weight > 0.0f) {
            const Var kl = kl_term(s1, s2);
            rec_.kl = kl.item();
            objective = ag::add(objective, ag::scale(kl, c_.ca_kl_weight));
        }
        checked(objective, "G_tex objective");
        apply("g_tex", n_.g_tex, objective);
    }

    TrainState& s_;
    CftGanNets& n_;
    const Inputs& in_;
    const TrainConfig& c_;
    GradientCapture* capture_;
    LossRecord rec_;
};

class CvStep {
public:
    CvStep(TrainState& s, const Inputs& in, GradientCapture* capture)
        : s_(s), n_(s.cv.value()), in_(in), c_(s.config), capture_(capture) {}

    LossRecord run() {
        rec_.iter = s_.k;
        rec_.r = schedule_weight(s_.k, c_.iterations);
        rec_.lr = lr_at(s_.k, c_);
        update_d();
        update_g();
        return rec_;
    }

private:
    TexGenOutput generate(captions::ConditionParams::Sample* keep = nullptr) {
        const Var z = normal_rows(s_.rng, in_.n, c_.dims.z_dim);
        auto cond = n_.gen.cond(in_.phi, normal_rows(s_.rng, in_.n, c_.dims.c_dim));
        if (keep) *keep = cond;
        return n_.gen(z, cond.c, true);
    }

    template <class Net>
    void apply(const std::string& name, Net& net, const Var& objective) {
        nn::zero_grad(n_.gen);
        nn::zero_grad(n_.disc);
        ag::backward(objective);
        capture_grads(capture_, name, net);
        s_.adam[name].step(nn::parameters(net), rec_.lr, c_);
        nn::zero_grad(n_.gen);
        nn::zero_grad(n_.disc);
    }

    void update_d() {
        const Var fake = generate().video.detach();
        const Var d_real = n_.disc(in_.real_video, in_.phi, true);
        const Var d_fake = n_.disc(fake, in_.phi, true);
        const Var loss = ag::add(mean_log(d_real, c_.log_eps), mean_log1m(d_fake, c_.log_eps));
        rec_.ld_tex = checked(loss, "L_D");
        rec_.d.dt_real = values(d_real);
        rec_.d.dt_fake_real_flow = values(d_fake);
        apply("disc", n_.disc, ag::scale(loss, -1.0f));
    }

    void update_g() {
        captions::ConditionParams::Sample cond;
        const TexGenOutput g = generate(&cond);
        const Var d = n_.disc(g.video, in_.phi, true);
        const Var loss = generator_term(d, c_.log_eps, c_.non_saturating);
        rec_.lg_tex = checked(loss, "L_G");
        rec_.d.gt_fake_real_flow = values(d);
        Var objective = loss;
        const Var mask_l1 = ag::mean(ag::abs(g.mask));
        rec_.mask_l1 = mask_l1.item();
        if (c_.mask_l1) objective = ag::add(objective, ag::scale(mask_l1, c_.lambda_mask));
        if (c_.ca_kl_weight > 0.0f) {
            const Var kl = captions::condition_kl(cond);
            rec_.kl = kl.item();
            objective = ag::add(objective, ag::scale(kl, c_.ca_kl_weight));
        }
        checked(objective, "G objective");
        apply("gen", n_.gen, objective);
    }

    TrainState& s_;
    CvGanNets& n_;
    const Inputs& in_;
    const TrainConfig& c_;
    GradientCapture* capture_;
    LossRecord rec_;
};

}  // namespace

LossRecord train_step(TrainState& state, const Batch& batch, GradientCapture* capture) {
    if (state.k >= state.config.iterations) {
        throw Error(ErrorCode::InvalidIteration, "training already reached K = " + std::to_string(state.config.iterations));
    }
    const Inputs in = pack_batch(batch, state.config.dims, state.config.batch_size);
    TrainState snapshot = state.clone();
    try {
        LossRecord rec = state.kind == ModelKind::CftGan ? CftStep(state, in, capture).run()
                                                         : CvStep(state, in, capture).run();
        ++state.k;
        return rec;
    } catch (...) {
        state = std::move(snapshot);
        throw;
    }
}

LossRecord train_iteration(TrainState& state, const TrainingSet& set, GradientCapture* capture) {
    const Rng before = state.rng;
    const Batch batch = draw_batch(state, set);
    try {
        return train_step(state, batch, capture);
    } catch (...) {
        state.rng = before;
        throw;
    }
}

SampledClip sample_clip(TrainState& state, const std::vector<float>& phi, Rng& rng) {
    const auto& d = state.config.dims;
    if (static_cast<int>(phi.size()) != d.phi_dim) throw Error(ErrorCode::DimensionMismatch, "phi dimension");
    const Var p = nn::pack_rows({phi});
    SampledClip out;
    if (state.cft) {
        auto& n = *state.cft;
        const Var zf = normal_rows(rng, 1, d.z_dim);
        const Var cf = n.g_flow.cond(p, normal_rows(rng, 1, d.c_dim)).c;
        const Var flow = n.g_flow(zf, cf, false).flow;
        const Var zt = normal_rows(rng, 1, d.z_dim);
        auto& tex_cond = state.config.shared_condition ? n.g_flow.cond : n.g_tex.cond;
        const Var ct = tex_cond(p, normal_rows(rng, 1, d.c_dim)).c;
        out.video = VideoVolume(d.frames, d.height, d.width);
        out.video.data = nn::unpack_volume(n.g_tex(zt, ct, flow, false).video, 0);
        out.flow = FlowVolume(d.frames, d.height, d.width);
        out.flow.data = nn::unpack_volume(flow, 0);
    } else {
        auto& n = state.cv.value();
        const Var z = normal_rows(rng, 1, d.z_dim);
        const Var c = n.gen.cond(p, normal_rows(rng, 1, d.c_dim)).c;
        out.video = VideoVolume(d.frames, d.height, d.width);
        out.video.data = nn::unpack_volume(n.gen(z, c, false).video, 0);
    }
    return out;
}

SliceCoverage slice_coverage(const std::vector<CapturedGrad>& grads) {
    SliceCoverage cov;
    for (const auto& g : grads) {
        const std::size_t numel = ag::numel(g.shape);
        const std::size_t cols = g.shape.size() >= 2 ? static_cast<std::size_t>(g.shape.back()) : 1;
        const std::size_t slices = g.shape.size() >= 2 ? cols : numel;
        cov.total += slices;
        if (g.grad.empty()) continue;
        for (std::size_t s = 0; s < slices; ++s) {
            bool any = false;
            if (g.shape.size() >= 2) {
                for (std::size_t row = 0; row < numel / cols && !any; ++row) any = g.grad[row * cols + s] != 0.0f;
            } else {
                any = g.grad[s] != 0.0f;
            }
            if (any) ++cov.nonzero;
        }
    }
    return cov;
}

std::string loss_csv_header() { return "iter,ld_flow,lg_flow,ld_tex,lg_tex,lr"; }

std::string loss_csv_row(const LossRecord& r) {
    std::ostringstream os;
    os.precision(9);
    os << r.iter << ',' << r.ld_flow << ',' << r.lg_flow << ',' << r.ld_tex << ',' << r.lg_tex << ',' << r.lr;
    return os.str();
}

}  // namespace cftgan::train
