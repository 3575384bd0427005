#pragma once

// libtorch's logging header defines CHECK; doctest's must win in test code.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
