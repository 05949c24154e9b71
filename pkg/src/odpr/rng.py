"""Named random streams split from one master seed."""

import zlib

import numpy as np

STREAMS = ("data", "value-fit", "eval-sampler", "actor-sampler", "init")


def stream_seed(seed, name):
    # crc32 is stable across processes, unlike hash()
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def make_rng(seed, name):
    return np.random.default_rng(stream_seed(seed, name))
