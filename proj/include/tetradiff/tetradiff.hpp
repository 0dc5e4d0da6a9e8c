#pragma once

// Umbrella header for the whole engine.

#include "adam.hpp"
#include "bvh.hpp"
#include "common.hpp"
#include "databake.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "kdtree.hpp"
#include "marching.hpp"
#include "mesh.hpp"
#include "mesh_io.hpp"
#include "metrics.hpp"
#include "ops.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "tetgrid.hpp"

namespace tetradiff
{
    inline constexpr const char * kVersion = "0.1.0";
} // namespace tetradiff
