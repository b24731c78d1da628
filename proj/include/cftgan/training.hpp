#pragma once

// Blended two-stage adversarial training: losses, schedule, Adam, the
// per-iteration update sequence and the single-stage baseline trainer.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cftgan/captions.hpp"
#include "cftgan/cvgan.hpp"
#include "cftgan/data.hpp"
#include "cftgan/texture_gan.hpp"

namespace cftgan::train {

enum class ModelKind { CftGan, CvGan };
std::string to_string(ModelKind k);
ModelKind model_kind_from(const std::string& s);

struct TrainConfig {
    ModelDims dims = ModelDims::toy();
    std::int64_t iterations = 2000;  // K
    int batch_size = 8;
    float lr0 = 2e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    std::int64_t lr_halving_period = 10000;
    bool mask_l1 = true;
    float lambda_mask = 0.1f;
    float ca_kl_weight = 0.0f;
    bool non_saturating = false;
    float log_eps = 1e-7f;
    std::uint64_t seed = 0;
    /// Both stages use the flow generator's condition maps.
    bool shared_condition = false;
    bool zero_caption_flow = false;
    bool zero_caption_tex_fg = false;
    bool zero_caption_tex_bg = false;
    int word_dim = 16;
    int mixture_centers = 4;

    /// Small volumes train stably at a higher rate; the large preset keeps 2e-4.
    static TrainConfig toy() {
        TrainConfig c;
        c.lr0 = 1e-3f;
        return c;
    }
    static TrainConfig paper();

    /// Throws InvalidConfig.
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Ordered key/value form used by config files and checkpoint manifests.
std::map<std::string, std::string> to_key_values(const TrainConfig& c);
/// Returns false for an unknown key; throws InvalidConfig for a bad value.
bool apply_key_value(TrainConfig& c, const std::string& key, const std::string& value);
TrainConfig train_config_from(const std::map<std::string, std::string>& kv);
std::uint64_t config_hash(const TrainConfig& c);

/// k / K. Throws InvalidIteration unless 0 <= k <= K and K > 0.
double schedule_weight(std::int64_t k, std::int64_t K);
/// lr0 * 0.5^floor(iteration / halving_period).
double lr_at(std::int64_t iteration, const TrainConfig& c);

// Loss values as written (discriminator objectives are to be ascended).
// Every argument is a [N, 1] tensor of discriminator outputs in (0, 1); logs
// clamp their argument at eps and expectations are batch means.
ag::Var loss_d_flow(const ag::Var& d_real, const ag::Var& d_fake, float eps);
/// With `non_saturating`, each log(1 - D) becomes -log D.
ag::Var loss_g_flow(const ag::Var& d_flow_fake, const ag::Var& d_tex_fake, double r, float eps,
                    bool non_saturating = false);
ag::Var loss_d_tex(const ag::Var& d_real, const ag::Var& d_fake_real_flow, const ag::Var& d_fake_gen_flow, double r,
                   float eps);
ag::Var loss_g_tex(const ag::Var& d_fake_real_flow, const ag::Var& d_fake_gen_flow, double r, float eps,
                   bool non_saturating = false);

struct Adam {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::int64_t t = 0;

    void step(const std::vector<nn::NamedParam>& params, double lr, const TrainConfig& c);
};

struct CftGanNets {
    FlowGenerator g_flow;
    FlowDiscriminator d_flow;
    TextureGenerator g_tex;
    TextureDiscriminator d_tex;
};

struct CvGanNets {
    CvGenerator gen;
    CvDiscriminator disc;
};

struct TrainState {
    TrainConfig config;
    ModelKind kind = ModelKind::CftGan;
    std::int64_t k = 0;
    Rng rng;
    captions::CaptionEncoder encoder;
    std::optional<CftGanNets> cft;
    std::optional<CvGanNets> cv;
    std::map<std::string, Adam> adam;

    /// Fresh networks initialized from config.seed.
    static TrainState create(const TrainConfig& config, ModelKind kind, captions::CaptionEncoder encoder);
    /// Deep copy: no parameter storage is shared with *this.
    TrainState clone() const;

    /// Calls f(name, network) for every network in a fixed order.
    template <class F>
    void for_each_network(F&& f) {
        if (cft) {
            f(std::string("d_flow"), cft->d_flow);
            f(std::string("d_tex"), cft->d_tex);
            f(std::string("g_flow"), cft->g_flow);
            f(std::string("g_tex"), cft->g_tex);
        }
        if (cv) {
            f(std::string("disc"), cv->disc);
            f(std::string("gen"), cv->gen);
        }
    }
    /// Applies the ablation flags of `config` to the generators.
    void apply_flags();
};

/// Captioned clips at canvas size with their caption embeddings.
struct TrainingSet {
    std::vector<data::ClipSample> clips;
    std::vector<std::vector<float>> phi;

    static TrainingSet build(std::vector<data::ClipSample> clips, const captions::CaptionEncoder& encoder);
};

struct Batch {
    std::vector<data::ClipSample> clips;  // augmented to the model's (T, H, W)
    std::vector<std::vector<float>> phi;
};

/// Samples batch_size clips with replacement and augments them, all from state.rng.
Batch draw_batch(TrainState& state, const TrainingSet& set);

/// Discriminator outputs behind each loss term, recorded for auditing.
struct DiscOutputs {
    std::vector<float> df_real, df_fake;                              // D_flow update
    std::vector<float> dt_real, dt_fake_real_flow, dt_fake_gen_flow;  // D_tex update
    std::vector<float> gf_d_flow, gf_d_tex;                           // G_flow update
    std::vector<float> gt_fake_real_flow, gt_fake_gen_flow;           // G_tex update
};

struct LossRecord {
    std::int64_t iter = 0;
    double ld_flow = 0, lg_flow = 0, ld_tex = 0, lg_tex = 0;
    double mask_l1 = 0, kl = 0;
    double lr = 0, r = 0;
    DiscOutputs d;
};

struct CapturedGrad {
    std::string name;
    ag::Shape shape;
    std::vector<float> grad;  // empty if nothing reached the parameter
};

/// Gradients of each network's own objective, taken just before its update.
struct GradientCapture {
    std::map<std::string, std::vector<CapturedGrad>> networks;
};

struct SliceCoverage {
    std::size_t total = 0;
    std::size_t nonzero = 0;
    double fraction() const { return total ? static_cast<double>(nonzero) / total : 0.0; }
};

/// A slice is one output column of a matrix-shaped parameter or one element
/// of a vector-shaped parameter.
SliceCoverage slice_coverage(const std::vector<CapturedGrad>& grads);

/// One iteration: D_flow, D_tex, G_flow (G_tex frozen), G_tex for CFT-GAN;
/// D then G for CV-GAN. Increments k. On NonFiniteLoss the state is restored
/// and the error rethrown. Throws InvalidIteration once k reaches K.
LossRecord train_step(TrainState& state, const Batch& batch, GradientCapture* capture = nullptr);

/// draw_batch + train_step; on failure the rng is rolled back as well.
LossRecord train_iteration(TrainState& state, const TrainingSet& set, GradientCapture* capture = nullptr);

struct SampledClip {
    VideoVolume video;
    FlowVolume flow;  // empty for the single-stage model
};

/// Inference-mode generation for one caption embedding; noise comes from `rng`.
SampledClip sample_clip(TrainState& state, const std::vector<float>& phi, Rng& rng);

/// Header and row of the loss log.
std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);

}  // namespace cftgan::train
