"""Particle filter over unknown block sizes.

Each particle is one hypothesized size vector paired with its own simulated
world. Weights are updated from the symbolic agreement (Jaccard similarity
over ground fluents) between the real outcome and each particle world's
outcome after replaying the same commanded trajectory; systematic
resampling with a small size jitter fights impoverishment and triggers on
effective-sample-size degeneracy (or every step, by configuration).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .transitions import ConfigError

MATCH_FLOOR = 0.01
JITTER_FRAC = 0.01          # of prior width, per resample
WEIGHT_TOL = 1e-9


@dataclass
class Particle:
    sizes: np.ndarray
    weight: float
    world: Optional[object] = None


class ParticleSet:
    """N hypothesized size vectors with normalized weights."""

    def __init__(self, sizes: np.ndarray, weights: np.ndarray,
                 prior: np.ndarray, rng: np.random.Generator, worlds=None):
        self.sizes = np.asarray(sizes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.prior = np.asarray(prior, dtype=float)  # (n_blocks, 2) lo/hi
        self.rng = rng
        self.worlds = list(worlds) if worlds is not None else [None] * len(self.sizes)
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError("particle weights must sum to 1")

    def __len__(self):
        return len(self.weights)

    @property
    def n(self):
        return len(self.weights)

    def particle(self, i: int) -> Particle:
        return Particle(self.sizes[i].copy(), float(self.weights[i]),
                        self.worlds[i])

    def replace(self, sizes=None, weights=None, worlds=None) -> "ParticleSet":
        return ParticleSet(
            self.sizes if sizes is None else sizes,
            self.weights if weights is None else weights,
            self.prior, self.rng,
            self.worlds if worlds is None else worlds)


def init_particles(n: int, prior, seed: int, n_blocks: int = None) -> ParticleSet:
    """Sizes i.i.d. uniform over the prior support, uniform weights.

    ``prior`` is either a (lo, hi) pair shared by every block or a
    per-block (n_blocks, 2) array.
    """
    if n < 1:
        raise ConfigError("need at least one particle")
    prior = np.asarray(prior, dtype=float)
    if prior.ndim == 1:
        if n_blocks is None:
            raise ConfigError("n_blocks required with a shared prior")
        prior = np.tile(prior, (n_blocks, 1))
    rng = np.random.default_rng(seed)
    sizes = rng.uniform(prior[:, 0], prior[:, 1], size=(n, prior.shape[0]))
    weights = np.full(n, 1.0 / n)
    return ParticleSet(sizes, weights, prior, rng)


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def weigh(ps: ParticleSet, s_real: frozenset, s_sim) -> ParticleSet:
    """w_i <- w_i * (jaccard(s_real, s_sim_i) + floor), then normalize."""
    if len(s_sim) != ps.n:
        raise ConfigError("need one simulated state per particle")
    factors = np.array([jaccard(s_real, s) + MATCH_FLOOR for s in s_sim])
    w = ps.weights * factors
    return ps.replace(weights=w / w.sum())


def ess(ps: ParticleSet) -> float:
    return 1.0 / float(np.sum(ps.weights ** 2))


def _systematic_indices(weights: np.ndarray, rng, n_out: int = None) -> np.ndarray:
    n = len(weights) if n_out is None else n_out
    positions = (np.arange(n) + rng.uniform()) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    idx = np.zeros(n, dtype=int)
    i = j = 0
    while i < n:
        if positions[i] < cumulative[j]:
            idx[i] = j
            i += 1
        else:
            j += 1
    return idx


def resample(ps: ParticleSet, mode: str = "ess") -> ParticleSet:
    """Systematic resampling with per-size Gaussian jitter.

    mode "ess" resamples only when the effective sample size drops below
    N/2; mode "always" resamples every call.
    """
    if mode not in ("ess", "always"):
        raise ConfigError(f"unknown resample mode {mode!r}")
    if mode == "ess" and ess(ps) >= ps.n / 2.0:
        return ps
    idx = _systematic_indices(ps.weights, ps.rng)
    width = ps.prior[:, 1] - ps.prior[:, 0]
    sizes = ps.sizes[idx].copy()
    sizes += ps.rng.normal(0.0, JITTER_FRAC * width, size=sizes.shape)
    sizes = np.clip(sizes, ps.prior[:, 0], ps.prior[:, 1])
    worlds = []
    for new_i, src in enumerate(idx):
        w = ps.worlds[src]
        if w is not None:
            w = w.copy()
            w.set_block_sizes(sizes[new_i])
        worlds.append(w)
    weights = np.full(ps.n, 1.0 / ps.n)
    return ps.replace(sizes=sizes, weights=weights, worlds=worlds)


def estimate(ps: ParticleSet) -> np.ndarray:
    """Weighted mean size per block (diagnostic; fusion happens on poses)."""
    return ps.weights @ ps.sizes


def size_variance(ps: ParticleSet) -> np.ndarray:
    mean = estimate(ps)
    return ps.weights @ (ps.sizes - mean) ** 2


def diagnostics_row(ps: ParticleSet, episode: int) -> list:
    mean = estimate(ps)
    var = size_variance(ps)
    rows = []
    for b in range(ps.sizes.shape[1]):
        rows.append([episode, b, f"{mean[b]:.6f}", f"{var[b]:.8f}",
                     f"{ess(ps):.3f}"])
    return rows


def write_diagnostics(path, rows, header=True) -> None:
    new = not _file_has_content(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new and header:
            w.writerow(["episode", "block", "size_mean", "size_var", "ess"])
        w.writerows(rows)


def _file_has_content(path) -> bool:
    try:
        with open(path) as fh:
            return bool(fh.readline())
    except FileNotFoundError:
        return False
