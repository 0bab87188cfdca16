#pragma once

#include "mocha/error.hpp"
#include "mocha/log.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/distances.hpp"
#include "mocha/numerics/grad_check.hpp"
#include "mocha/numerics/hyperbolic_fit.hpp"
#include "mocha/numerics/pca.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/objectives/losses.hpp"
#include "mocha/pipeline/adam.hpp"
#include "mocha/pipeline/distill.hpp"
#include "mocha/pipeline/episodes.hpp"
#include "mocha/pipeline/prototypes.hpp"
#include "mocha/stats/summary.hpp"
#include "mocha/stats/wilcoxon.hpp"
#include "mocha/student/backbone.hpp"
#include "mocha/student/model.hpp"
#include "mocha/student/params.hpp"
#include "mocha/student/region_pool.hpp"
#include "mocha/student/render.hpp"
#include "mocha/student/translator.hpp"
#include "mocha/teacher/emulator.hpp"
#include "mocha/teacher/supervision.hpp"
#include "mocha/teacher/world.hpp"
#include "mocha/toy/toy.hpp"
