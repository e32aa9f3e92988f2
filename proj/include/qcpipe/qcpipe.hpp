#pragma once

#include "qcpipe/catalog.hpp"
#include "qcpipe/dataset_io.hpp"
#include "qcpipe/cnn/checkpoint.hpp"
#include "qcpipe/cnn/network.hpp"
#include "qcpipe/cnn/train.hpp"
#include "qcpipe/error.hpp"
#include "qcpipe/eval/kappa.hpp"
#include "qcpipe/eval/mcnemar.hpp"
#include "qcpipe/eval/metrics.hpp"
#include "qcpipe/eval/splitting.hpp"
#include "qcpipe/labels.hpp"
#include "qcpipe/nifti.hpp"
#include "qcpipe/phantom.hpp"
#include "qcpipe/preprocess.hpp"
#include "qcpipe/registration.hpp"
#include "qcpipe/resample.hpp"
#include "qcpipe/slices.hpp"
#include "qcpipe/split.hpp"
#include "qcpipe/volume.hpp"
