#pragma once

#include "mcms/autodiff.hpp"
#include "mcms/blur.hpp"
#include "mcms/config.hpp"
#include "mcms/dataset.hpp"
#include "mcms/decompose.hpp"
#include "mcms/error.hpp"
#include "mcms/freq.hpp"
#include "mcms/gff.hpp"
#include "mcms/image_io.hpp"
#include "mcms/losses.hpp"
#include "mcms/metrics.hpp"
#include "mcms/mssa.hpp"
#include "mcms/net.hpp"
#include "mcms/ops.hpp"
#include "mcms/selftest.hpp"
#include "mcms/tensor.hpp"
#include "mcms/train.hpp"
