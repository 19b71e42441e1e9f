#pragma once

#include "affine/config.hpp"
#include "affine/core.hpp"
#include "affine/empirical.hpp"
#include "affine/flow.hpp"
#include "affine/generator.hpp"
#include "affine/io.hpp"
#include "affine/matrix_exp.hpp"
#include "affine/models.hpp"
#include "affine/movingframe.hpp"
#include "affine/parallel.hpp"
#include "affine/regularity.hpp"
#include "affine/report.hpp"
#include "affine/rng.hpp"
#include "affine/suite.hpp"
#include "affine/verify.hpp"
