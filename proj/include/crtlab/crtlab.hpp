#pragma once

// Convenience umbrella for the whole library.

#include "crtlab/common.hpp"
#include "crtlab/config.hpp"
#include "crtlab/data.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/model.hpp"
#include "crtlab/optim.hpp"
#include "crtlab/oracle.hpp"
#include "crtlab/regularize.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/run.hpp"
#include "crtlab/tensor.hpp"
#include "crtlab/threat.hpp"
#include "crtlab/train.hpp"
#include "crtlab/verify.hpp"
