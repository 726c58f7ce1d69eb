#pragma once

#include "actsparse/calibrator.hpp"
#include "actsparse/collector.hpp"
#include "actsparse/error.hpp"
#include "actsparse/evaluator.hpp"
#include "actsparse/forward.hpp"
#include "actsparse/model.hpp"
#include "actsparse/patterns.hpp"
#include "actsparse/prefetch_sim.hpp"
#include "actsparse/sparsifier.hpp"
#include "actsparse/tensor.hpp"
#include "actsparse/threshold_table.hpp"
#include "actsparse/trainer.hpp"
#include "actsparse/weights_io.hpp"
