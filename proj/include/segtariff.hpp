#ifndef SEGTARIFF_HPP_
#define SEGTARIFF_HPP_

#include "segtariff/clustering.hpp"
#include "segtariff/demand.hpp"
#include "segtariff/error.hpp"
#include "segtariff/ingest.hpp"
#include "segtariff/optim.hpp"
#include "segtariff/pipeline.hpp"
#include "segtariff/pricing.hpp"
#include "segtariff/rng.hpp"
#include "segtariff/segmentation.hpp"
#include "segtariff/serialize.hpp"
#include "segtariff/synthgen.hpp"

#endif  // SEGTARIFF_HPP_
