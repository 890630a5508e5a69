#pragma once

#include "tan/conditionals/models.hpp"
#include "tan/data/dataset.hpp"
#include "tan/data/delimited.hpp"
#include "tan/data/generators.hpp"
#include "tan/data/preprocess.hpp"
#include "tan/diffcore/optim.hpp"
#include "tan/metrics/metrics.hpp"
#include "tan/model/checkpoint.hpp"
#include "tan/model/tan_model.hpp"
#include "tan/train/trainer.hpp"
#include "tan/runtime.hpp"
#include "tan/transforms/preset.hpp"
