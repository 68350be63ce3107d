# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Deterministic seed splitting.

Every random stream in a run is derived from one 64-bit experiment seed and a
label, so chains, initial points and reference draws replay identically no
matter which worker thread executes them.
"""

import hashlib

import numpy as np

NOISE_BLOCK = 4096


def derive_seed(base_seed: int, *labels) -> int:
    """Stable child seed: first 8 bytes of sha256 over "<seed>:<label>:..." """
    text = ':'.join([str(int(base_seed))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode('ascii')).digest()
    return int.from_bytes(digest[:8], 'big', signed=False)


def generator(base_seed: int, *labels) -> np.random.Generator:
    if labels:
        return np.random.default_rng(derive_seed(base_seed, *labels))
    return np.random.default_rng(int(base_seed) & 0xFFFFFFFFFFFFFFFF)


class NoiseStream:
    """One standard normal d-vector per iteration, drawn in blocks.

    The block size is fixed, so two streams built from the same seed hand out
    identical vectors for identical iteration indexes.
    """

    def __init__(self, seed: int, dim: int, block: int = NOISE_BLOCK):
        self._rng = generator(seed, 'noise')
        self._dim = dim
        self._block = block
        self._buffer = np.empty((0, dim))
        self._position = 0

    def next(self) -> np.ndarray:
        if self._position == self._buffer.shape[0]:
            self._buffer = self._rng.standard_normal((self._block, self._dim))
            self._position = 0
        row = self._buffer[self._position]
        self._position += 1
        return row
