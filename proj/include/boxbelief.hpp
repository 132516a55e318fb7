#pragma once

#include "boxbelief/errors.hpp"
#include "boxbelief/geometry.hpp"
#include "boxbelief/loss.hpp"
#include "boxbelief/diagnostics.hpp"
#include "boxbelief/recovery.hpp"
#include "boxbelief/synth.hpp"
#include "boxbelief/kitti_io.hpp"
#include "boxbelief/records.hpp"
