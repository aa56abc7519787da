#pragma once

#include "tiler/error.hpp"
#include "tiler/interval.hpp"
#include "tiler/scene.hpp"
#include "tiler/pgm.hpp"
#include "tiler/tiling.hpp"
#include "tiler/network.hpp"
#include "tiler/bounds.hpp"
#include "tiler/parallel.hpp"
#include "tiler/verifier.hpp"
#include "tiler/estimator.hpp"
#include "tiler/report.hpp"
#include "tiler/config.hpp"
