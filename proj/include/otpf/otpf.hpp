#pragma once

#include "otpf/dynamics.hpp"
#include "otpf/ensemble.hpp"
#include "otpf/ensemble_transform.hpp"
#include "otpf/error.hpp"
#include "otpf/experiments.hpp"
#include "otpf/filters.hpp"
#include "otpf/inference.hpp"
#include "otpf/random.hpp"
#include "otpf/transport.hpp"
