"""Constrained Dirichlet mixture for extreme observations.

One mixture component per face of the angular support: a point from the
component of face ``alpha`` has a heavy-tailed radius spread over the
coordinates in ``alpha`` according to a Dirichlet angle, while every other
coordinate is light-tailed noise (a translated exponential).  Singleton
components put the whole radius on one coordinate.

Weights and Dirichlet means are coupled by the marginal moment constraint,
so the model is parametrized by the product matrix ``rho[k, j] =
weight_k * mean_{k,j}``: the constraint then reads "every covered column of
rho sums to 1/d", and weights and means are recovered per row by

    pi_k = sum_j rho[k, j]        m[k, j] = rho[k, j] / pi_k.

All densities are evaluated in log space; products of up to ``d`` noise
terms underflow in linear space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .damex import SupportSet
from .errors import BoundaryPoint, DegeneratePolar, UncoveredCoordinate

COLUMN_SUM_TOL = 1e-8


@dataclass(frozen=True)
class ThetaParams:
    """Full parameter bundle: sparse weight matrix ``rho`` (K x d),
    concentrations ``nu`` (K), noise rates ``lam`` (K + d1), threshold r0."""

    support: SupportSet
    rho: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    r0: float

    def __post_init__(self):
        rho = np.ascontiguousarray(np.asarray(self.rho, dtype=float))
        nu = np.ascontiguousarray(np.asarray(self.nu, dtype=float))
        lam = np.ascontiguousarray(np.asarray(self.lam, dtype=float))
        for arr in (rho, nu, lam):
            arr.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "r0", float(self.r0))
        validate_theta(self)

    @property
    def K(self) -> int:
        return self.support.K

    @property
    def d(self) -> int:
        return self.support.d

    @property
    def d1(self) -> int:
        return self.support.d1

    @property
    def n_components(self) -> int:
        return self.support.n_components


@dataclass(frozen=True)
class ComponentView:
    """Derived mixture weights and Dirichlet mean vectors.

    ``pi`` has one weight per component (singletons fixed at 1/d); ``m`` is
    K x d with row k supported on face k and summing to 1.
    """

    pi: np.ndarray
    m: np.ndarray


@dataclass(frozen=True)
class PolarDecomposition:
    """Radius and angle of a point restricted to one face."""

    r: float
    w: np.ndarray
    noise_coords: np.ndarray


def validate_theta(theta: ThetaParams) -> None:
    sup = theta.support
    K, d, d1 = sup.K, sup.d, sup.d1
    if theta.rho.shape != (K, d):
        raise ValueError(f"rho shape {theta.rho.shape}, expected {(K, d)}")
    if theta.nu.shape != (K,):
        raise ValueError(f"nu shape {theta.nu.shape}, expected {(K,)}")
    if theta.lam.shape != (K + d1,):
        raise ValueError(f"lam shape {theta.lam.shape}, expected {(K + d1,)}")
    if K and not (theta.nu > 0).all():
        raise ValueError("concentrations must be positive")
    if (K + d1) and not (theta.lam > 0).all():
        raise ValueError("noise rates must be positive")
    if theta.r0 <= 0:
        raise ValueError(f"r0 must be positive, got {theta.r0}")

    pattern = np.zeros((K, d), dtype=bool)
    for k, face in enumerate(sup.faces):
        pattern[k, list(face)] = True
    if ((theta.rho > 0) != pattern).any():
        raise ValueError("rho must be positive exactly on the face pattern")

    covered = sup.covered()
    non_singleton = np.ones(d, dtype=bool)
    non_singleton[list(sup.singletons)] = False
    if (non_singleton & ~covered).any():
        j = int(np.nonzero(non_singleton & ~covered)[0][0])
        raise UncoveredCoordinate(f"coordinate {j} is in no face and no singleton")
    col_sums = theta.rho.sum(axis=0)
    bad = non_singleton & (np.abs(col_sums - 1.0 / d) > COLUMN_SUM_TOL)
    if bad.any():
        j = int(np.nonzero(bad)[0][0])
        raise ValueError(
            f"column {j} sums to {col_sums[j]:.12g}, expected {1 / d:.12g}"
        )

    if K:
        pi = theta.rho.sum(axis=1)
        if not ((pi > 0) & (pi < 1)).all():
            raise ValueError("face weights must lie in (0, 1)")
        if abs(pi.sum() - (1.0 - d1 / d)) > COLUMN_SUM_TOL:
            raise ValueError(
                f"face weights sum to {pi.sum():.12g}, expected {1 - d1 / d:.12g}"
            )


def rho_to_view(theta: ThetaParams) -> ComponentView:
    """Weights and mean vectors implied by the product parametrization."""
    sup = theta.support
    pi_faces = theta.rho.sum(axis=1)
    pi = np.concatenate([pi_faces, np.full(sup.d1, 1.0 / sup.d)])
    m = theta.rho / pi_faces[:, None] if sup.K else np.zeros((0, sup.d))
    pi.setflags(write=False)
    m.setflags(write=False)
    return ComponentView(pi=pi, m=m)


def view_to_rho(view: ComponentView, support: SupportSet) -> np.ndarray:
    """Inverse of :func:`rho_to_view` on the face block."""
    return view.m * view.pi[: support.K, None]


def project_rho(raw: np.ndarray, support: SupportSet) -> np.ndarray:
    """Column-normalize a positive matrix onto the constraint surface.

    Every coordinate covered by at least one face gets its column scaled to
    sum to 1/d; the input must be positive exactly on the face pattern.
    """
    raw = np.asarray(raw, dtype=float)
    K, d = support.K, support.d
    if raw.shape != (K, d):
        raise ValueError(f"raw shape {raw.shape}, expected {(K, d)}")
    pattern = np.zeros((K, d), dtype=bool)
    for k, face in enumerate(support.faces):
        pattern[k, list(face)] = True
    if ((raw > 0) != pattern).any():
        raise ValueError("raw matrix must be positive exactly on the face pattern")
    non_singleton = np.ones(d, dtype=bool)
    non_singleton[list(support.singletons)] = False
    covered = support.covered()
    if (non_singleton & ~covered).any():
        j = int(np.nonzero(non_singleton & ~covered)[0][0])
        raise UncoveredCoordinate(f"coordinate {j} is in no face and no singleton")
    rho = np.zeros_like(raw)
    col_sums = raw.sum(axis=0)
    cols = np.nonzero(covered)[0]
    rho[:, cols] = raw[:, cols] / (d * col_sums[cols])
    return rho


def polar_decomposition(v: np.ndarray, face) -> PolarDecomposition:
    """Split a point into radius/angle on ``face`` and off-face noise."""
    v = np.asarray(v, dtype=float)
    idx = list(face)
    r = float(v[idx].sum())
    if r <= 0:
        raise DegeneratePolar(f"zero radius on face {tuple(face)}")
    noise_idx = np.setdiff1d(np.arange(v.size), idx)
    return PolarDecomposition(r=r, w=v[idx] / r, noise_coords=v[noise_idx])


def log_dirichlet_density(w: np.ndarray, m: np.ndarray, nu: float) -> float:
    """Log Dirichlet density on the sub-simplex, mean ``m``, concentration
    ``nu``, with respect to (q-1)-dimensional Lebesgue measure."""
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    if w.shape != m.shape:
        raise ValueError(f"angle shape {w.shape} != mean shape {m.shape}")
    if (w <= 0).any():
        raise BoundaryPoint("angle has a zero coordinate")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"angle sums to {w.sum():.12g}, expected 1")
    if nu <= 0:
        raise ValueError(f"concentration must be positive, got {nu}")
    a = nu * m
    return float(gammaln(nu) - gammaln(a).sum() + ((a - 1.0) * np.log(w)).sum())


def dirichlet_density(w: np.ndarray, rho_k: np.ndarray, nu_k: float) -> float:
    """Dirichlet density with mean taken from one row of ``rho``.

    ``rho_k`` holds the face entries of the row; only its direction matters.
    """
    rho_k = np.asarray(rho_k, dtype=float)
    m = rho_k / rho_k.sum()
    return float(np.exp(log_dirichlet_density(w, m, nu_k)))


def log_noise_density(x, lam: float):
    """Log density of 1 + Exp(lam); zero density below 1 (log -inf)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(x >= 1.0, np.log(lam) - lam * (x - 1.0), -np.inf)
    return out if out.ndim else float(out)


def noise_density(x, lam: float):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, lam * np.exp(-lam * (x - 1.0)), 0.0)
    return out if out.ndim else float(out)


def log_conditional_density(v: np.ndarray, k: int, theta: ThetaParams) -> float:
    """Log density of a point given that component ``k`` generated it.

    Face components: Pareto radius and change-of-angle Jacobian fold into
    ``r^-(|face|+1)``, times the Dirichlet angle density, times the noise
    density of every off-face coordinate.  Singleton components put the
    radius on one coordinate (``v_j^-2``).
    """
    v = np.asarray(v, dtype=float)
    sup = theta.support
    if not 0 <= k < sup.n_components:
        raise ValueError(f"component {k} outside [0, {sup.n_components})")
    view = rho_to_view(theta)
    lam = theta.lam[k]
    if k < sup.K:
        face = sup.faces[k]
        pol = polar_decomposition(v, face)
        size = len(face)
        logp = -(size + 1) * np.log(pol.r)
        logp += log_dirichlet_density(pol.w, view.m[k, list(face)], theta.nu[k])
        logp += log_noise_density(pol.noise_coords, lam).sum()
    else:
        j = sup.singletons[k - sup.K]
        others = np.setdiff1d(np.arange(v.size), [j])
        logp = -2.0 * np.log(v[j])
        logp += log_noise_density(v[others], lam).sum()
    return float(logp)


def conditional_density(v: np.ndarray, k: int, theta: ThetaParams) -> float:
    return float(np.exp(log_conditional_density(v, k, theta)))


def log_mixture_density(v: np.ndarray, theta: ThetaParams) -> float:
    """Log of the full mixture density ``r0 * sum_k pi_k p(v | z_k)``."""
    v = np.asarray(v, dtype=float)
    if v.sum() < theta.r0:
        raise ValueError(
            f"radius {v.sum():.6g} below threshold r0={theta.r0:.6g}"
        )
    view = rho_to_view(theta)
    logs = np.array([
        log_conditional_density(v, k, theta) for k in range(theta.n_components)
    ])
    return float(np.log(theta.r0) + logsumexp(logs + np.log(view.pi)))


def mixture_density(v: np.ndarray, theta: ThetaParams) -> float:
    return float(np.exp(log_mixture_density(v, theta)))


def theta_to_json(theta: ThetaParams) -> str:
    """Serialize to JSON; floats round-trip bit-exactly via repr."""
    sup = theta.support
    triplets = [
        [k, int(j), float(theta.rho[k, j])]
        for k in range(sup.K)
        for j in sup.faces[k]
    ]
    payload = {
        "d": sup.d,
        "r0": theta.r0,
        "faces": [list(f) for f in sup.faces],
        "singletons": list(sup.singletons),
        "rho": triplets,
        "nu": theta.nu.tolist(),
        "lambda": theta.lam.tolist(),
    }
    return json.dumps(payload, indent=2)


def theta_from_json(text: str) -> ThetaParams:
    payload = json.loads(text)
    sup = SupportSet(
        d=payload["d"],
        faces=tuple(tuple(f) for f in payload["faces"]),
        singletons=tuple(payload["singletons"]),
    )
    rho = np.zeros((sup.K, sup.d))
    for k, j, value in payload["rho"]:
        rho[k, j] = value
    return ThetaParams(
        support=sup,
        rho=rho,
        nu=np.asarray(payload["nu"], dtype=float),
        lam=np.asarray(payload["lambda"], dtype=float),
        r0=payload["r0"],
    )
