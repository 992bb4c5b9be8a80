#pragma once

#include "mreit/errors.hpp"
#include "mreit/experiment.hpp"
#include "mreit/fields.hpp"
#include "mreit/forward.hpp"
#include "mreit/geometry.hpp"
#include "mreit/image_io.hpp"
#include "mreit/metrics.hpp"
#include "mreit/pde.hpp"
#include "mreit/phantom.hpp"
#include "mreit/reconstruct.hpp"
#include "mreit/recovery.hpp"
