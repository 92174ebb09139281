#pragma once

#include "hsbp/error.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/image_io.hpp"
#include "hsbp/filter.hpp"
#include "hsbp/parallel.hpp"
#include "hsbp/scene.hpp"
#include "hsbp/hull.hpp"
#include "hsbp/helmholtz.hpp"
#include "hsbp/mrf.hpp"
#include "hsbp/integration.hpp"
#include "hsbp/render.hpp"
#include "hsbp/eval.hpp"
#include "hsbp/pipeline.hpp"
