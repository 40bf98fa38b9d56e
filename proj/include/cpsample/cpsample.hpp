// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_CPSAMPLE_HPP
#define CPSAMPLE_CPSAMPLE_HPP

#include "cpsample/archive.hpp"
#include "cpsample/autodiff.hpp"
#include "cpsample/checkpoint.hpp"
#include "cpsample/config.hpp"
#include "cpsample/dataset.hpp"
#include "cpsample/diffusion.hpp"
#include "cpsample/frechet.hpp"
#include "cpsample/guidance.hpp"
#include "cpsample/lemma.hpp"
#include "cpsample/mia.hpp"
#include "cpsample/models.hpp"
#include "cpsample/parallel.hpp"
#include "cpsample/permutation.hpp"
#include "cpsample/pipeline.hpp"
#include "cpsample/report.hpp"
#include "cpsample/rng.hpp"
#include "cpsample/schedule.hpp"
#include "cpsample/similarity.hpp"
#include "cpsample/stats.hpp"
#include "cpsample/tensor.hpp"
#include "cpsample/training.hpp"
#include "cpsample/version.hpp"

#endif
