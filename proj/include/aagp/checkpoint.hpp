#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "aagp/error.hpp"
#include "aagp/io.hpp"
#include "aagp/model.hpp"
#include "aagp/sampler.hpp"

namespace aagp {

inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json to_json(const ModelParams& p) {
    return {{"b", to_json(p.b)},
            {"tau2", p.tau2},
            {"sigma2_1", p.sigma2_1},
            {"sigma2_2", p.sigma2_2},
            {"a", p.theta1.a},
            {"c", p.theta1.c},
            {"beta", p.theta1.beta},
            {"alpha", p.theta1.alpha},
            {"d", p.theta1.d},
            {"phi_s", p.theta2.phi_s},
            {"phi_u", p.theta2.phi_u},
            {"space_family", std::string(to_string(p.theta2.space_family))},
            {"time_family", std::string(to_string(p.theta2.time_family))}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
    ModelParams p;
    p.b = vector_from_json(j.at("b"));
    p.tau2 = j.at("tau2").get<double>();
    p.sigma2_1 = j.at("sigma2_1").get<double>();
    p.sigma2_2 = j.at("sigma2_2").get<double>();
    p.theta1 = {j.at("a").get<double>(), j.at("c").get<double>(), j.at("beta").get<double>(), j.at("alpha").get<double>(),
                j.at("d").get<int>()};
    p.theta2 = {j.at("phi_s").get<double>(), j.at("phi_u").get<double>(),
                parse_corr_family(j.at("space_family").get<std::string>()),
                parse_corr_family(j.at("time_family").get<std::string>())};
    return p;
}
}  // namespace detail

/// JSON bundle with everything needed for an exact resume.
inline nlohmann::json checkpoint_to_json(const ChainState& s) {
    nlohmann::json draws = nlohmann::json::array();
    for (std::size_t k = 0; k < s.store.size(); ++k)
        draws.push_back({{"iteration", s.store.iterations[k]},
                         {"params", detail::to_json(s.store.params[k])},
                         {"w_star", detail::to_json(s.store.w_star[k])}});
    return {{"version", kCheckpointVersion},
            {"next_iteration", s.next_iteration},
            {"params", detail::to_json(s.params)},
            {"latent",
             {{"w_star", detail::to_json(s.latent.w_star)},
              {"w1", detail::to_json(s.latent.w1)},
              {"w2", detail::to_json(s.latent.w2)},
              {"z_missing", detail::to_json(s.latent.z_missing)}}},
            {"rng_state", s.rng_state},
            {"scales", s.scales},
            {"window_accepts", s.window_accepts},
            {"window_index", s.window_index},
            {"accepted", s.store.accepted},
            {"proposed", s.store.proposed},
            {"rebuild_failures", s.store.rebuild_failures},
            {"iteration_seconds", s.store.iteration_seconds},
            {"draws", draws}};
}

inline ChainState checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
        ChainState s;
        s.next_iteration = j.at("next_iteration").get<std::int64_t>();
        s.params = detail::params_from_json(j.at("params"));
        const auto& l = j.at("latent");
        s.latent = {detail::vector_from_json(l.at("w_star")), detail::vector_from_json(l.at("w1")),
                    detail::vector_from_json(l.at("w2")), detail::vector_from_json(l.at("z_missing"))};
        s.rng_state = j.at("rng_state").get<std::string>();
        s.scales = j.at("scales").get<ThetaArray>();
        s.window_accepts = j.at("window_accepts").get<ThetaCounts>();
        s.window_index = j.at("window_index").get<std::int64_t>();
        s.store.accepted = j.at("accepted").get<ThetaCounts>();
        s.store.proposed = j.at("proposed").get<ThetaCounts>();
        s.store.rebuild_failures = j.at("rebuild_failures").get<std::int64_t>();
        s.store.iteration_seconds = j.at("iteration_seconds").get<std::vector<double>>();
        for (const auto& d : j.at("draws")) {
            s.store.iterations.push_back(d.at("iteration").get<std::int64_t>());
            s.store.params.push_back(detail::params_from_json(d.at("params")));
            s.store.w_star.push_back(detail::vector_from_json(d.at("w_star")));
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

inline void write_checkpoint(const std::string& path, const ChainState& s) { write_json(path, checkpoint_to_json(s)); }

inline ChainState read_checkpoint(const std::string& path) { return checkpoint_from_json(read_json(path)); }

}  // namespace aagp
