#pragma once

#include "stockformer/experiment/config.hpp"
#include "stockformer/experiment/pipeline.hpp"
#include "stockformer/experiment/sweep.hpp"
#include "stockformer/experiment/train.hpp"
#include "stockformer/experiment/windows.hpp"
