#pragma once

#include "cshape/cmdp.hpp"

#include <filesystem>
#include <string>

namespace testutil {

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::path(CSHAPE_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Single-noise CMDP with every mechanism given explicitly.
inline cshape::TabularCMDP tiny_cmdp(int n_states, int n_actions, int n_noise) {
    cshape::TabularCMDP::Tables t;
    t.n_states = n_states;
    t.n_actions = n_actions;
    t.n_noise = n_noise;
    t.noise_probs.assign(n_noise, 1.0 / n_noise);
    t.transition.assign(static_cast<std::size_t>(n_states * n_actions * n_noise), 0);
    t.reward.assign(static_cast<std::size_t>(n_states * n_actions * n_noise), 0.0);
    t.behavior.assign(static_cast<std::size_t>(n_states * n_noise), 0);
    t.initial_state_probs.assign(n_states, 0.0);
    t.initial_state_probs[0] = 1.0;
    t.gamma = 0.9;
    t.reward_bound = 1.0;
    return cshape::TabularCMDP(t);
}

inline cshape::TabularCMDP::Tables tables_of(int n_states, int n_actions, int n_noise) {
    return tiny_cmdp(n_states, n_actions, n_noise).tables();
}

inline std::size_t sxu(const cshape::TabularCMDP::Tables& t, int s, int x, int u) {
    return (static_cast<std::size_t>(s) * t.n_actions + x) * t.n_noise + u;
}

}  // namespace testutil
