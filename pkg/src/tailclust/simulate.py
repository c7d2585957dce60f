"""Synthetic data from the generative mixture, with ground-truth labels.

A point from face component k carries a truncated-Pareto radius spread over
the face coordinates by a Dirichlet angle; every other coordinate is
1 + Exp(rate) noise.  Singleton components put the whole radius on one
coordinate.  Used by the test and benchmark suites, where support
recovery, parameter errors and labeling errors are measured against the
embedded truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .damex import SupportSet, make_face
from .errors import InfeasibleK
from .mixture import ThetaParams, project_rho, rho_to_view

LAMBDA_SWEEP = (1.0, 0.75, 0.5, 0.25, 0.1)

# Face member counts are drawn uniformly from {2, ..., MAX_FACE_SIZE} and the
# raw weight matrix from U(0.5, 1.5): small faces and bounded weight ratios
# keep every Dirichlet mean coordinate well away from zero, which is what
# makes rectangle-count support recovery exact at moderate noise levels.
MAX_FACE_SIZE = 5
RAW_RHO_RANGE = (0.5, 1.5)


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    K: int
    nu: float = 20.0
    lam: float = 1.0
    r0: float = 100.0
    n0: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.d < 2 or self.K < 0:
            raise ValueError(f"need d >= 2 and K >= 0, got d={self.d}, K={self.K}")
        if self.K > 2 ** self.d - self.d - 1:
            raise ValueError(f"K={self.K} exceeds the number of candidate faces")
        if min(self.nu, self.lam, self.r0) <= 0 or self.n0 < 1:
            raise ValueError("nu, lam, r0 must be positive and n0 >= 1")


@dataclass(frozen=True)
class LabeledSample:
    v: np.ndarray
    labels: np.ndarray
    theta_true: ThetaParams


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    )


def random_support(
    d: int,
    K: int,
    seed: int = 0,
    max_face_size: int | None = None,
) -> SupportSet:
    """Draw K distinct, pairwise non-nested faces; uncovered coordinates
    become singleton components."""
    if max_face_size is None:
        max_face_size = min(d, MAX_FACE_SIZE)
    if not 2 <= max_face_size <= d:
        raise ValueError(f"max_face_size must lie in [2, {d}]")
    rng = _rng(seed, 0)
    faces: list[tuple[int, ...]] = []
    attempts = 0
    budget = 200 * K + 1000
    while len(faces) < K:
        attempts += 1
        if attempts > budget:
            raise InfeasibleK(
                f"could not draw {K} non-nested faces of size <= "
                f"{max_face_size} in dimension {d} after {budget} attempts"
            )
        size = int(rng.integers(2, max_face_size + 1))
        face = make_face(rng.choice(d, size=size, replace=False))
        fset = set(face)
        if any(fset <= set(g) or set(g) <= fset for g in faces):
            continue
        faces.append(face)
    covered = np.zeros(d, dtype=bool)
    for f in faces:
        covered[list(f)] = True
    singletons = tuple(int(j) for j in np.nonzero(~covered)[0])
    return SupportSet(d=d, faces=tuple(faces), singletons=singletons)


def random_theta(
    support: SupportSet,
    nu: float | np.ndarray,
    lam: float | np.ndarray,
    seed: int = 0,
    r0: float = 100.0,
) -> ThetaParams:
    """Random weight matrix on the support pattern, column-normalized onto
    the constraint surface; concentrations and noise rates as given."""
    rng = _rng(seed, 1)
    raw = np.zeros((support.K, support.d))
    lo, hi = RAW_RHO_RANGE
    for k, face in enumerate(support.faces):
        raw[k, list(face)] = rng.uniform(lo, hi, size=len(face))
    rho = project_rho(raw, support)
    nu_vec = np.broadcast_to(np.asarray(nu, dtype=float), (support.K,)).copy()
    lam_vec = np.broadcast_to(
        np.asarray(lam, dtype=float), (support.n_components,)
    ).copy()
    return ThetaParams(support=support, rho=rho, nu=nu_vec, lam=lam_vec, r0=r0)


def sample_point(
    theta: ThetaParams, k: int, rng: np.random.Generator
) -> np.ndarray:
    """One draw from component k."""
    sup = theta.support
    d = sup.d
    lam = theta.lam[k]
    v = np.empty(d)
    radius = theta.r0 / (1.0 - rng.uniform())
    if k < sup.K:
        face = list(sup.faces[k])
        view = rho_to_view(theta)
        alpha = theta.nu[k] * view.m[k, face]
        w = rng.dirichlet(alpha)
        while (w <= 0.0).any():
            # Gamma-draw underflow can zero out a coordinate; redraw.
            w = rng.dirichlet(alpha)
        noise = np.setdiff1d(np.arange(d), face)
        v[face] = radius * w
        v[noise] = 1.0 + rng.exponential(scale=1.0 / lam, size=noise.size)
    else:
        j = sup.singletons[k - sup.K]
        v[j] = radius
        others = np.setdiff1d(np.arange(d), [j])
        v[others] = 1.0 + rng.exponential(scale=1.0 / lam, size=others.size)
    return v


def component_probabilities(theta: ThetaParams) -> np.ndarray:
    """Mixture draw probabilities: face weights, then 1/d per singleton."""
    probs = rho_to_view(theta).pi
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"component probabilities sum to {total:.12g}")
    return probs / total


def sample_dataset(spec: SyntheticSpec) -> LabeledSample:
    """n0 labeled draws from a randomly generated parameter bundle."""
    support = random_support(spec.d, spec.K, seed=spec.seed)
    theta = random_theta(
        support, nu=spec.nu, lam=spec.lam, seed=spec.seed, r0=spec.r0
    )
    rng = _rng(spec.seed, 2)
    probs = component_probabilities(theta)
    labels = rng.choice(support.n_components, size=spec.n0, p=probs)
    v = np.stack([sample_point(theta, int(k), rng) for k in labels])
    return LabeledSample(v=v, labels=labels, theta_true=theta)
