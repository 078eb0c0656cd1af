#pragma once

#include "tracelens/error.hpp"
#include "tracelens/random.hpp"
#include "tracelens/ptcodec.hpp"
#include "tracelens/imaging.hpp"
#include "tracelens/dataset.hpp"
#include "tracelens/models/classifier.hpp"
#include "tracelens/models/model_io.hpp"
#include "tracelens/henet.hpp"
#include "tracelens/explain.hpp"
#include "tracelens/synthgen.hpp"
#include "tracelens/harness.hpp"
