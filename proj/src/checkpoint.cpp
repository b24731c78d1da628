#include "cftgan/checkpoint.hpp"

#include "cftgan/blob_file.hpp"
#include "cftgan/error.hpp"

namespace cftgan::train {

namespace {

constexpr std::uint16_t kVersion = 1;

/// Collects parameters and buffers under a common prefix.
struct Collect : nn::ParamVisitor {
    std::vector<std::pair<std::string, ag::Var*>> params;
    std::vector<std::pair<std::string, std::vector<float>*>> buffers;
    void param(const std::string& name, ag::Var& v) override { params.emplace_back(name, &v); }
    void buffer(const std::string& name, std::vector<float>& v) override { buffers.emplace_back(name, &v); }
};

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::CorruptCheckpoint, what); }

void copy_into(const BlobArray& a, const ag::Shape& shape, std::span<float> dst) {
    if (a.shape != shape || a.data.size() != dst.size()) corrupt("shape mismatch for '" + a.name + "'");
    std::copy(a.data.begin(), a.data.end(), dst.begin());
}

}  // namespace

void save_checkpoint(const TrainState& state_in, const std::filesystem::path& path) {
    // for_each_network is non-const; visiting does not modify anything.
    auto& state = const_cast<TrainState&>(state_in);
    BlobFile file;
    file.magic = "CFTK";
    file.version = kVersion;
    const auto kv = to_key_values(state.config);
    file.meta["kind"] = to_string(state.kind);
    file.meta["k"] = state.k;
    file.meta["config"] = kv;
    file.meta["config_hash"] = std::to_string(config_hash(state.config));
    file.meta["rng"] = state.rng.serialize();
    nlohmann::json adam_t = nlohmann::json::object();

    state.for_each_network([&](const std::string& name, auto& net) {
        Collect c;
        net.visit(c, name + ".");
        for (auto& [pname, var] : c.params) {
            file.arrays.push_back({pname, var->shape(), {var->value().begin(), var->value().end()}});
        }
        for (auto& [bname, buf] : c.buffers) {
            file.arrays.push_back({bname, {static_cast<int>(buf->size())}, *buf});
        }
        const Adam& adam = state.adam.at(name);
        adam_t[name] = adam.t;
        for (std::size_t i = 0; i < c.params.size(); ++i) {
            const auto& var = *c.params[i].second;
            const bool stepped = i < adam.m.size() && adam.m[i].size() == var.numel();
            const std::vector<float> zeros(stepped ? 0 : var.numel(), 0.0f);
            file.arrays.push_back({"adam.m." + c.params[i].first, var.shape(), stepped ? adam.m[i] : zeros});
            file.arrays.push_back({"adam.v." + c.params[i].first, var.shape(), stepped ? adam.v[i] : zeros});
        }
    });
    file.meta["adam_t"] = adam_t;
    state.encoder.append_to(file, "encoder.");
    write_blob_file(path, file);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    const BlobFile file = read_blob_file(path, "CFTK", ErrorCode::CorruptCheckpoint);
    if (file.version != kVersion) corrupt("unsupported checkpoint version " + std::to_string(file.version));
    TrainConfig config;
    ModelKind kind{};
    std::int64_t k = 0;
    std::string rng_state;
    nlohmann::json adam_t;
    try {
        const auto kv = file.meta.at("config").get<std::map<std::string, std::string>>();
        config = train_config_from(kv);
        if (file.meta.at("config_hash").get<std::string>() != std::to_string(config_hash(config))) {
            corrupt("config hash mismatch");
        }
        kind = model_kind_from(file.meta.at("kind").get<std::string>());
        k = file.meta.at("k").get<std::int64_t>();
        rng_state = file.meta.at("rng").get<std::string>();
        adam_t = file.meta.at("adam_t");
    } catch (const nlohmann::json::exception& e) {
        corrupt(std::string("manifest: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptCheckpoint) throw;
        corrupt(std::string("manifest: ") + e.what());
    }
    if (k < 0 || k > config.iterations) corrupt("iteration counter out of range");

    captions::CaptionEncoder encoder = captions::CaptionEncoder::read_from(file, "encoder.");
    TrainState state;
    try {
        state = TrainState::create(config, kind, std::move(encoder));
    } catch (const Error& e) {
        corrupt(std::string("stored config is unusable: ") + e.what());
    }
    state.k = k;
    state.rng.deserialize(rng_state);

    std::size_t expected = 0;
    state.for_each_network([&](const std::string& name, auto& net) {
        Collect c;
        net.visit(c, name + ".");
        Adam& adam = state.adam.at(name);
        adam.m.assign(c.params.size(), {});
        adam.v.assign(c.params.size(), {});
        try {
            adam.t = adam_t.at(name).get<std::int64_t>();
        } catch (const nlohmann::json::exception&) {
            corrupt("missing Adam step count for " + name);
        }
        for (std::size_t i = 0; i < c.params.size(); ++i) {
            auto& [pname, var] = c.params[i];
            copy_into(file.array(pname), var->shape(), var->mutable_value());
            const auto& m = file.array("adam.m." + pname);
            const auto& v = file.array("adam.v." + pname);
            if (m.shape != var->shape() || v.shape != var->shape()) corrupt("moment shape mismatch for " + pname);
            adam.m[i] = m.data;
            adam.v[i] = v.data;
            expected += 3;
        }
        for (auto& [bname, buf] : c.buffers) {
            copy_into(file.array(bname), {static_cast<int>(buf->size())}, *buf);
            ++expected;
        }
    });
    std::size_t encoder_arrays = 0;
    for (const auto& a : file.arrays) encoder_arrays += a.name.rfind("encoder.", 0) == 0 ? 1 : 0;
    if (file.arrays.size() != expected + encoder_arrays) corrupt("unexpected extra arrays");
    return state;
}

}  // namespace cftgan::train
