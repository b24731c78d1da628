#pragma once

// Helpers shared by the unit and acceptance tests.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "cftgan/autograd.hpp"
#include "cftgan/rng.hpp"
#include "cftgan/volume.hpp"

namespace cftgan::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cftgan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::vector<float> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(lo + (hi - lo) * rng.uniform());
    return v;
}

inline Volume random_volume(int c, int t, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Volume v(c, t, h, w);
    v.data = random_values(v.size(), rng, lo, hi);
    return v;
}

/// Largest relative discrepancy between the analytic gradient of
/// sum(f(leaves) * probe) and a central difference, over every leaf entry.
inline double gradient_error(std::vector<ag::Var> leaves, const std::function<ag::Var(std::vector<ag::Var>&)>& f,
                             std::uint64_t seed = 7, double h = 1e-2) {
    Rng rng(seed);
    ag::Var probe;
    auto objective = [&](std::vector<ag::Var>& xs) {
        ag::Var y = f(xs);
        if (!probe) probe = ag::Var::constant(y.shape(), random_values(y.numel(), rng));
        return ag::sum(ag::mul(y, probe));
    };
    for (auto& l : leaves) l.zero_grad();
    ag::backward(objective(leaves));
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const std::vector<float> analytic(leaf.grad().begin(), leaf.grad().end());
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const float orig = leaf.value()[i];
            leaf.mutable_value()[i] = orig + static_cast<float>(h);
            const double up = objective(leaves).item();
            leaf.mutable_value()[i] = orig - static_cast<float>(h);
            const double down = objective(leaves).item();
            leaf.mutable_value()[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric)));
        }
    }
    return worst;
}

inline ag::Var random_param(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    const auto n = ag::numel(shape);
    return ag::Var::parameter(std::move(shape), random_values(n, rng, lo, hi));
}

inline ag::Var random_const(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    const auto n = ag::numel(shape);
    return ag::Var::constant(std::move(shape), random_values(n, rng, lo, hi));
}

/// Runs a shell command, returning its exit status (or -1).
inline int run_command(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    if (rc == -1 || !WIFEXITED(rc)) return -1;
    return WEXITSTATUS(rc);
}

}  // namespace cftgan::testing
