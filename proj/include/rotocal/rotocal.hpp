#pragma once

// Umbrella header for the rotation-calibration toolkit.

#include "rotocal/activation_batch.hpp"
#include "rotocal/calibrator.hpp"
#include "rotocal/distributions.hpp"
#include "rotocal/hadamard.hpp"
#include "rotocal/matrix.hpp"
#include "rotocal/objectives.hpp"
#include "rotocal/optimizers.hpp"
#include "rotocal/qr.hpp"
#include "rotocal/quantizer.hpp"
#include "rotocal/report_io.hpp"
#include "rotocal/rng.hpp"
#include "rotocal/tensor_io.hpp"
#include "rotocal/toy_block.hpp"
