#pragma once

#include "common.hpp"
#include "volume.hpp"
#include "trajectory.hpp"
#include "nufft.hpp"
#include "density.hpp"
#include "coils.hpp"
#include "wavelet.hpp"
#include "conv3d.hpp"
#include "recon.hpp"
#include "training.hpp"
#include "evalkit.hpp"
#include "bench.hpp"
