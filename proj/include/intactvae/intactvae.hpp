// Umbrella header.
#pragma once

#include "intactvae/adam.hpp"
#include "intactvae/autodiff.hpp"
#include "intactvae/dataset.hpp"
#include "intactvae/dgp.hpp"
#include "intactvae/estimation.hpp"
#include "intactvae/gaussian.hpp"
#include "intactvae/harness.hpp"
#include "intactvae/metrics.hpp"
#include "intactvae/mlp.hpp"
#include "intactvae/model.hpp"
#include "intactvae/rng.hpp"
#include "intactvae/tensor.hpp"
#include "intactvae/training.hpp"
