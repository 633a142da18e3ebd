#pragma once

#include "mapn/aggregator.hpp"
#include "mapn/autodiff.hpp"
#include "mapn/curvature.hpp"
#include "mapn/diagnostics.hpp"
#include "mapn/encoders.hpp"
#include "mapn/error.hpp"
#include "mapn/eval.hpp"
#include "mapn/graph.hpp"
#include "mapn/graph_io.hpp"
#include "mapn/lap_pe.hpp"
#include "mapn/optim.hpp"
#include "mapn/param_store.hpp"
#include "mapn/rng.hpp"
#include "mapn/sampler.hpp"
#include "mapn/ssm.hpp"
#include "mapn/synthetic.hpp"
#include "mapn/tasks.hpp"
#include "mapn/trainer.hpp"
