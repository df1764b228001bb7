#pragma once

#include "orbit/common.hpp"
#include "orbit/fixtures.hpp"
#include "orbit/geometry.hpp"
#include "orbit/io.hpp"
#include "orbit/motion.hpp"
#include "orbit/neural.hpp"
#include "orbit/optimizer.hpp"
#include "orbit/parallel.hpp"
#include "orbit/prediction.hpp"
#include "orbit/predictor.hpp"
#include "orbit/quality.hpp"
#include "orbit/simulation.hpp"
#include "orbit/synthetic.hpp"
#include "orbit/training.hpp"
