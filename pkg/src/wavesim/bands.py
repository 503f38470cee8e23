"""Sub-band occupancy vectors and contiguous waveforms.

An interference state or observation is a length-``d`` 0/1 vector (1 marks an
occupied sub-band). A waveform occupies the contiguous bands
``start .. start + width - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NoVacancy


@dataclass(frozen=True, order=True)
class Waveform:
    start: int
    width: int

    @property
    def stop(self):
        return self.start + self.width

    def bits(self, d):
        out = np.zeros(d, dtype=np.int8)
        out[self.start:self.stop] = 1
        return out


def as_bits(value, d=None):
    """Coerce a bit string (``"11000"``) or sequence to an int8 vector."""
    if isinstance(value, str):
        value = [int(c) for c in value.strip() if c in "01"]
    bits = np.asarray(value, dtype=np.int8).ravel()
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError(f"sub-band vector must be binary, got {value!r}")
    if d is not None and bits.size != d:
        raise ValueError(f"expected {d} sub-bands, got {bits.size}")
    return bits


def bit_string(bits):
    return "".join(str(int(b)) for b in bits)


@lru_cache(maxsize=None)
def _catalog(d):
    return tuple(
        Waveform(start, width)
        for width in range(d, 0, -1)
        for start in range(d - width + 1)
    )


def enumerate_waveforms(d):
    """All contiguous waveforms, widest first, then by start; ``d(d+1)/2`` of them."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return list(_catalog(d))


def waveform_index(w, d):
    """Position of ``w`` in :func:`enumerate_waveforms` order."""
    wider = sum(d - k + 1 for k in range(w.width + 1, d + 1))
    return wider + w.start


def collision(w, s):
    """Return ``(C, N_c)``: collision flag and number of shared occupied bands."""
    s = np.asarray(s)
    nc = int(np.count_nonzero(s[w.start:w.stop]))
    return int(nc > 0), nc


def vacancy_runs(s):
    """``(start, length)`` of every maximal run of zeros, left to right."""
    runs = []
    start = None
    for i, b in enumerate(np.asarray(s)):
        if b == 0 and start is None:
            start = i
        elif b != 0 and start is not None:
            runs.append((start, i - start))
            start = None
    if start is not None:
        runs.append((start, len(s) - start))
    return runs


def widest_runs(s):
    runs = vacancy_runs(s)
    if not runs:
        return []
    best = max(length for _, length in runs)
    return [Waveform(start, length) for start, length in runs if length == best]


def widest_vacancy(s, rng=None):
    """Widest contiguous vacancy of ``s`` as a waveform.

    Ties are broken uniformly with one uniform draw from ``rng``; without an
    ``rng`` the leftmost run wins. Raises :class:`NoVacancy` if every band is
    occupied.
    """
    ties = widest_runs(s)
    if not ties:
        raise NoVacancy("every sub-band is occupied")
    if rng is None:
        return ties[0]
    k = min(int(rng.random() * len(ties)), len(ties) - 1)
    return ties[k]


def saa_candidates(s):
    """Waveforms the sense-and-avoid rule picks from, uniformly.

    The widest vacancies, or every width-1 waveform when nothing is free
    (the radar transmits anyway).
    """
    ties = widest_runs(s)
    if ties:
        return ties
    return [Waveform(start, 1) for start in range(len(s))]


def saa_waveform(s, rng=None):
    """Sense-and-avoid choice for observation ``s``; one uniform per call."""
    options = saa_candidates(s)
    if rng is None:
        return options[0]
    k = min(int(rng.random() * len(options)), len(options) - 1)
    return options[k]


def widest_vacancy_width(s):
    ties = widest_runs(s)
    return ties[0].width if ties else 0


def missed_opportunity(w, s):
    """Return ``(M, N_mo)`` with ``N_mo = max(|w*| - |w|, 0)``."""
    nmo = max(widest_vacancy_width(s) - w.width, 0)
    return int(nmo > 0), nmo


@dataclass(frozen=True)
class LossParams:
    eta: float = 0.05

    def check(self, d):
        if not 0.0 <= self.eta <= 1.0 / d + 1e-12:
            raise ValueError(f"eta must lie in [0, 1/{d}], got {self.eta}")
        return self


def loss(w, s, params):
    """1 on any collision, otherwise ``eta * N_mo``."""
    _, nc = collision(w, s)
    if nc > 0:
        return 1.0
    _, nmo = missed_opportunity(w, s)
    return params.eta * nmo


@dataclass(frozen=True)
class SinrParams:
    snr0_db: float = 20.0
    inr_db: float = 14.0


def sinr_db(w, s, model=SinrParams()):
    """SINR surrogate in dB.

    Clear-channel SNR scales with the occupied bandwidth fraction; each
    colliding band adds interference at the given INR, diluted over the
    waveform's bands.
    """
    d = len(s)
    _, nc = collision(w, s)
    inr = 10.0 ** (model.inr_db / 10.0)
    return (
        model.snr0_db
        + 10.0 * math.log10(w.width / d)
        - 10.0 * math.log10(1.0 + (nc / w.width) * inr)
    )


def observe(s, p_miss, rng):
    """Observed state: ``s`` itself, or all zeros with probability ``p_miss``."""
    if not 0.0 <= p_miss <= 1.0:
        raise ValueError("p_miss must lie in [0, 1]")
    s = np.asarray(s)
    if rng.random() < p_miss:
        return np.zeros_like(s)
    return s.copy()
