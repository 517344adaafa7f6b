#pragma once

#include "bdl/tensor.hpp"
#include "bdl/rng.hpp"
#include "bdl/image.hpp"
#include "bdl/io.hpp"
#include "bdl/burst.hpp"
#include "bdl/baseline.hpp"
#include "bdl/schedules.hpp"
#include "bdl/metrics.hpp"
#include "bdl/nn.hpp"
#include "bdl/denoiser.hpp"
#include "bdl/train.hpp"
#include "bdl/samplers.hpp"
#include "bdl/distill.hpp"
#include "bdl/config.hpp"
#include "bdl/experiment.hpp"
#include "bdl/toy2d.hpp"
