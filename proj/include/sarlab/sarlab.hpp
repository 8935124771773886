#pragma once

// Umbrella header.

#include "sarlab/csv.hpp"
#include "sarlab/dataset.hpp"
#include "sarlab/dependence.hpp"
#include "sarlab/explain.hpp"
#include "sarlab/gbt.hpp"
#include "sarlab/indicators.hpp"
#include "sarlab/linear_baseline.hpp"
#include "sarlab/matrix.hpp"
#include "sarlab/metrics.hpp"
#include "sarlab/multilevel.hpp"
#include "sarlab/parallel.hpp"
#include "sarlab/pipeline.hpp"
#include "sarlab/rng.hpp"
#include "sarlab/stats.hpp"
#include "sarlab/svg.hpp"
