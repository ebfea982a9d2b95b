#pragma once

#include "catprune/clustering.hpp"
#include "catprune/config.hpp"
#include "catprune/denoiser.hpp"
#include "catprune/experiment.hpp"
#include "catprune/grid.hpp"
#include "catprune/io.hpp"
#include "catprune/metrics.hpp"
#include "catprune/parallel.hpp"
#include "catprune/rng.hpp"
#include "catprune/selector.hpp"
