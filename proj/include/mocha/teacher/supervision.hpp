#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/pca.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/teacher/emulator.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

struct SupervisionTarget {
    std::uint64_t image_id = 0;
    std::size_t region = 0;
    Split split = Split::Distill;
    int class_id = 0;
    std::vector<double> z_v;
    std::vector<double> h;
    std::vector<double> u;
    std::vector<double> u_hat_prime; ///< PCA projection of u
    std::vector<double> u_prime;     ///< u_hat_prime with each channel divided by its deviation
};

/// Ask build_supervision to fit a fresh projector on the distillation split.
struct PcaFitRequest {
    std::size_t d_t = 16;
};

struct SupervisionSet {
    std::vector<SupervisionTarget> targets;
    PcaProjector projector;
    SigmaMode sigma_mode = SigmaMode::Empirical;

    /// Index of the target for (image_id, region), built on demand.
    const SupervisionTarget& at(std::uint64_t image_id, std::size_t region) const {
        if (index_.empty())
            for (std::size_t i = 0; i < targets.size(); ++i) index_[{targets[i].image_id, targets[i].region}] = i;
        const auto it = index_.find({image_id, region});
        if (it == index_.end())
            fail(ErrorKind::InvalidConfig,
                 "no supervision target for image " + std::to_string(image_id) + " region " + std::to_string(region));
        return targets[it->second];
    }

private:
    mutable std::map<std::pair<std::uint64_t, std::size_t>, std::size_t> index_;
};

/// Fused teacher vector u for every region, without projection.
inline std::vector<SupervisionTarget> emulate_targets(std::span<const SceneSample> scenes, const TeacherEmulator& em) {
    std::vector<SupervisionTarget> out;
    for (const SceneSample& s : scenes)
        for (std::size_t r = 0; r < s.regions.size(); ++r) {
            SupervisionTarget t;
            t.image_id = s.image_id;
            t.region = r;
            t.split = s.split;
            t.class_id = s.regions[r].class_id;
            auto teacher = em.emulate_region(t.class_id, region_key(s.image_id, r));
            t.z_v = std::move(teacher.z_v);
            t.h = std::move(teacher.h);
            t.u = fuse(t.z_v, t.h);
            out.push_back(std::move(t));
        }
    return out;
}

/// Fits a projector on the distillation-split u vectors.
inline PcaProjector fit_projector(std::span<const SupervisionTarget> targets, std::size_t d_t) {
    std::vector<double> rows;
    std::size_t n = 0, d = 0;
    for (const auto& t : targets) {
        if (t.split != Split::Distill) continue;
        d = t.u.size();
        rows.insert(rows.end(), t.u.begin(), t.u.end());
        ++n;
    }
    require(n > 0, ErrorKind::DegenerateData, "no distillation-split regions to fit the projector on");
    return pca_fit(Tensor({n, d}, std::move(rows)), d_t);
}

inline void project_targets(std::vector<SupervisionTarget>& targets, const PcaProjector& p, SigmaMode mode) {
    for (auto& t : targets) {
        t.u_hat_prime = p.project(t.u, false);
        t.u_prime = p.project(t.u, true, mode);
    }
}

/// Teacher-side supervision for every region of `scenes`: emulate, fuse,
/// then project with the given projector or one fitted on the distillation split.
inline SupervisionSet build_supervision(std::span<const SceneSample> scenes, const TeacherEmulator& em,
                                        const std::variant<PcaProjector, PcaFitRequest>& projector,
                                        SigmaMode mode = SigmaMode::Empirical) {
    require(!scenes.empty(), ErrorKind::DegenerateData, "build_supervision needs at least one scene");
    SupervisionSet set;
    set.targets = emulate_targets(scenes, em);
    set.sigma_mode = mode;
    if (const auto* req = std::get_if<PcaFitRequest>(&projector))
        set.projector = fit_projector(set.targets, req->d_t);
    else
        set.projector = std::get<PcaProjector>(projector);
    project_targets(set.targets, set.projector, mode);
    return set;
}

// ---- cache ----------------------------------------------------------------

namespace detail {

inline void append_array(std::string& out, std::span<const double> values) {
    out += '[';
    char buf[32];
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof buf, "%.17g", values[i]);
        out += buf;
    }
    out += ']';
}

} // namespace detail

/// One JSON object per region, floats printed with 17 significant digits.
inline std::string to_jsonl(std::span<const SupervisionTarget> targets) {
    std::string out;
    for (const auto& t : targets) {
        out += "{\"image_id\":" + std::to_string(t.image_id) + ",\"region\":" + std::to_string(t.region) +
               ",\"split\":\"" + to_string(t.split) + "\",\"class_id\":" + std::to_string(t.class_id);
        const std::pair<const char*, const std::vector<double>*> fields[] = {
            {"z_v", &t.z_v}, {"h", &t.h}, {"u", &t.u}, {"u_hat_prime", &t.u_hat_prime}, {"u_prime", &t.u_prime}};
        for (const auto& [name, vec] : fields) {
            out += ",\"";
            out += name;
            out += "\":";
            detail::append_array(out, *vec);
        }
        out += "}\n";
    }
    return out;
}

inline std::vector<SupervisionTarget> targets_from_jsonl(std::istream& in) {
    std::vector<SupervisionTarget> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            SupervisionTarget t;
            t.image_id = j.at("image_id").get<std::uint64_t>();
            t.region = j.at("region").get<std::size_t>();
            t.split = split_from_string(j.at("split").get<std::string>());
            t.class_id = j.at("class_id").get<int>();
            t.z_v = j.at("z_v").get<std::vector<double>>();
            t.h = j.at("h").get<std::vector<double>>();
            t.u = j.at("u").get<std::vector<double>>();
            t.u_hat_prime = j.at("u_hat_prime").get<std::vector<double>>();
            t.u_prime = j.at("u_prime").get<std::vector<double>>();
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::InvalidConfig, "supervision cache line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<SupervisionTarget> targets_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    return targets_from_jsonl(in);
}

} // namespace mocha
