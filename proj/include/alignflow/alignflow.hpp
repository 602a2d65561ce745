#ifndef ALIGNFLOW_ALIGNFLOW_HPP
#define ALIGNFLOW_ALIGNFLOW_HPP

#include "binary_io.hpp"
#include "checkerboard.hpp"
#include "density.hpp"
#include "error.hpp"
#include "flow.hpp"
#include "nn.hpp"
#include "optim.hpp"
#include "pairing.hpp"
#include "point_file.hpp"
#include "random.hpp"
#include "run_config.hpp"
#include "sampler.hpp"
#include "sdot.hpp"
#include "text.hpp"

#endif  // ALIGNFLOW_ALIGNFLOW_HPP
