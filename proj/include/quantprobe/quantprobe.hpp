#pragma once

#include <quantprobe/dataset_io.hpp>
#include <quantprobe/embeddings.hpp>
#include <quantprobe/errors.hpp>
#include <quantprobe/experiments.hpp>
#include <quantprobe/metrics.hpp>
#include <quantprobe/nn.hpp>
#include <quantprobe/parallel.hpp>
#include <quantprobe/probes.hpp>
#include <quantprobe/qpemb.hpp>
#include <quantprobe/report.hpp>
#include <quantprobe/rng.hpp>
#include <quantprobe/synthgen.hpp>
#include <quantprobe/tokenizer.hpp>
#include <quantprobe/training.hpp>
