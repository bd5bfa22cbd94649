#pragma once

#include "tomodiff/checkpoint.hpp"
#include "tomodiff/config.hpp"
#include "tomodiff/csv.hpp"
#include "tomodiff/data.hpp"
#include "tomodiff/denoiser.hpp"
#include "tomodiff/diffusion.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/estimator.hpp"
#include "tomodiff/manifest.hpp"
#include "tomodiff/metrics.hpp"
#include "tomodiff/nn.hpp"
#include "tomodiff/plot.hpp"
#include "tomodiff/preprocess.hpp"
#include "tomodiff/projection.hpp"
#include "tomodiff/toy.hpp"
#include "tomodiff/trainer.hpp"
