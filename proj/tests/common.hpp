#pragma once

#include <cmath>

#include <netdyn/redmap.hpp>

namespace fixtures {

inline netdyn::SystemParams p1_system(double N = 250.0)
{
    return netdyn::make_system(N, 75e6, 4000.0, 0.1, 3750.0, netdyn::SimpleModel{std::sqrt(1.5)});
}

inline netdyn::MapModel p1(double w = 0.1)
{
    return netdyn::MapModel(p1_system(), netdyn::RedParams{250.0, 750.0, 0.1, w});
}

// Small-buffer set used for the chaos checks.
inline netdyn::MapModel small_set(double w, double q_min = 50.0, double p_max = 0.1)
{
    return netdyn::MapModel(netdyn::make_system(20.0, 1.5e6, 500.0, 0.1, 300.0, netdyn::SimpleModel{std::sqrt(8.0 / 3.0)}),
                            netdyn::RedParams{q_min, 100.0, p_max, w});
}

inline netdyn::MapModel detailed_set(double w = 0.1)
{
    return netdyn::MapModel(netdyn::make_system(249.0, 74.7e6, 4000.0, 0.1, 3735.0, netdyn::DetailedModel{}),
                            netdyn::RedParams{249.0, 747.0, 0.1, w});
}

// Washout experiment block.
inline netdyn::MapModel washout_set(double R0 = 0.1)
{
    return netdyn::MapModel(netdyn::make_system(129.0, 40e6, 4000.0, R0, 3735.0, netdyn::SimpleModel{std::sqrt(1.5)}),
                            netdyn::RedParams{249.0, 747.0, 0.1, 1.0 / 32.0});
}

inline double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

} // namespace fixtures
