#include "cftgan/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cftgan/error.hpp"

namespace cftgan {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse(const std::string& key, const std::string& value) {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw Error(ErrorCode::InvalidConfig, "bad value '" + value + "' for key '" + key + "'");
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace

RunConfig RunConfig::preset(const std::string& scale) {
    RunConfig c;
    if (scale == "toy") return c;
    if (scale != "paper") throw Error(ErrorCode::InvalidConfig, "unknown scale '" + scale + "' (toy or paper)");
    c.scale = "paper";
    c.train = train::TrainConfig::paper();
    c.data = data::Scale::paper();
    c.checkpoint_every = 1000;
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "scale") {
        *this = preset(value);
    } else if (key == "canvas") {
        data.canvas = parse<int>(key, value);
    } else if (key == "clip_frames") {
        data.frames = parse<int>(key, value);
    } else if (key == "data_seed") {
        data_seed = parse<std::uint64_t>(key, value);
    } else if (key == "val_every") {
        val_every = parse<int>(key, value);
    } else if (key == "model") {
        train::model_kind_from(value);
        model = value;
    } else if (key == "checkpoint_every") {
        checkpoint_every = parse<std::int64_t>(key, value);
    } else if (key == "configs") {
        std::string tags;
        for (char t : value) {
            if (t == ',' || t == ' ') continue;
            if (t < 'a' || t > 'f') throw Error(ErrorCode::InvalidConfig, "ablation configs must be within a-f");
            tags.push_back(t);
        }
        configs = tags;
    } else if (key == "n_captions") {
        n_captions = parse<int>(key, value);
    } else if (key == "n_repeats") {
        n_repeats = parse<int>(key, value);
    } else if (key == "budget") {
        budget = parse<std::int64_t>(key, value);
    } else if (key == "max_seconds") {
        max_seconds = parse<double>(key, value);
    } else if (!train::apply_key_value(train, key, value)) {
        throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    }
    // Crop and clip length follow the model's volume.
    data.crop = train.dims.height;
    data.clip_len = train.dims.frames;
}

void RunConfig::validate() const {
    train.validate();
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw Error(ErrorCode::InvalidConfig, what);
    };
    require(train.dims.height == train.dims.width, "height and width must be equal");
    require(data.canvas >= data.crop, "canvas must be at least the crop size");
    require(data.frames >= data.clip_len, "clip_frames must be at least frames");
    require(checkpoint_every > 0, "checkpoint_every must be > 0");
    require(n_captions > 0 && n_repeats > 0 && budget > 0, "ablation sizes must be > 0");
    require(max_seconds >= 0.0, "max_seconds must be >= 0");
    require(!configs.empty(), "configs must name at least one ablation");
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "scale = " << scale << '\n';
    for (const auto& [k, v] : train::to_key_values(train)) os << k << " = " << v << '\n';
    os << "canvas = " << data.canvas << '\n';
    os << "clip_frames = " << data.frames << '\n';
    os << "data_seed = " << data_seed << '\n';
    os << "val_every = " << val_every << '\n';
    os << "model = " << model << '\n';
    os << "checkpoint_every = " << checkpoint_every << '\n';
    os << "configs = " << configs << '\n';
    os << "n_captions = " << n_captions << '\n';
    os << "n_repeats = " << n_repeats << '\n';
    os << "budget = " << budget << '\n';
    os << "max_seconds = " << format_double(max_seconds) << '\n';
    return os.str();
}

RunConfig parse_run_config(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream is(text);
    int line_no = 0;
    for (std::string line; std::getline(is, line);) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
        }
        entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    RunConfig c;
    for (const auto& [k, v] : entries) {
        if (k == "scale") c = RunConfig::preset(v);
    }
    for (const auto& [k, v] : entries) {
        if (k != "scale") c.set(k, v);
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IOFailure, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
    config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace cftgan
