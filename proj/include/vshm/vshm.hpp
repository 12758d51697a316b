#pragma once

#include "vshm/detection.hpp"
#include "vshm/error.hpp"
#include "vshm/kautz.hpp"
#include "vshm/montecarlo.hpp"
#include "vshm/parallel.hpp"
#include "vshm/plant.hpp"
#include "vshm/rng.hpp"
#include "vshm/signals.hpp"
#include "vshm/time_series.hpp"
#include "vshm/volterra.hpp"
