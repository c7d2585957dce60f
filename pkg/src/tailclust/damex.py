"""Sparse angular-support recovery from rectangle occupation counts.

Above a scale ``t = n/k``, the positive orthant splits into thickened
rectangles, one per nonempty subset of coordinates: a point falls in the
rectangle of the subset whose coordinates exceed ``eps * t``.  Counting
points per rectangle estimates the tail mass carried by each candidate
group of jointly-large features; groups above a mass threshold form the
support set fed to the mixture model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BelowScale, EmptySupport, SupportMismatch
from .ingest import StandardizedDataset

Face = tuple[int, ...]


def make_face(members) -> Face:
    """Canonical face: sorted tuple of distinct nonnegative indices."""
    face = tuple(sorted(int(j) for j in set(members)))
    if not face:
        raise ValueError("a face must contain at least one coordinate")
    if face[0] < 0:
        raise ValueError(f"negative coordinate in face {face}")
    return face


@dataclass(frozen=True)
class MassTable:
    """Estimated mass per occupied rectangle."""

    entries: dict[Face, float]
    k: float
    eps: float
    scale: float
    n_above: int
    d: int

    def total_mass(self) -> float:
        return float(sum(self.entries.values()))


@dataclass(frozen=True)
class SupportSet:
    """Faces (size >= 2, descending mass) plus singleton coordinates.

    ``masses`` aligns with ``faces``; ``singleton_masses`` aligns with
    ``singletons``.  Both are None for supports not derived from data
    (for instance the generating support of a synthetic sample).
    """

    d: int
    faces: tuple[Face, ...]
    singletons: tuple[int, ...]
    masses: tuple[float, ...] | None = None
    singleton_masses: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(make_face(f) for f in self.faces))
        object.__setattr__(self, "singletons", tuple(int(j) for j in self.singletons))
        if self.masses is not None:
            object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if self.singleton_masses is not None:
            object.__setattr__(
                self, "singleton_masses",
                tuple(float(m) for m in self.singleton_masses),
            )
        if len(set(self.faces)) != len(self.faces):
            raise ValueError("duplicate faces in support set")
        if len(set(self.singletons)) != len(self.singletons):
            raise ValueError("duplicate singletons in support set")
        for f in self.faces:
            if len(f) < 2:
                raise ValueError(f"face {f} has fewer than 2 members")
            if f[-1] >= self.d:
                raise ValueError(f"face {f} exceeds dimension {self.d}")
        for j in self.singletons:
            if not 0 <= j < self.d:
                raise ValueError(f"singleton {j} outside [0, {self.d})")
        if self.K + self.d1 < 1:
            raise ValueError("support set is empty")

    @property
    def K(self) -> int:
        return len(self.faces)

    @property
    def d1(self) -> int:
        return len(self.singletons)

    @property
    def n_components(self) -> int:
        return self.K + self.d1

    def components(self) -> list[Face]:
        """All components in model order: faces first, then singletons."""
        return list(self.faces) + [(j,) for j in self.singletons]

    def component_labels(self) -> list[str]:
        return [",".join(str(j) for j in f) for f in self.faces] + [
            f"s{j}" for j in self.singletons
        ]

    def covered(self) -> np.ndarray:
        """Boolean mask of coordinates belonging to at least one face."""
        mask = np.zeros(self.d, dtype=bool)
        for f in self.faces:
            mask[list(f)] = True
        return mask

    def to_json(self) -> str:
        payload = {
            "d": self.d,
            "faces": [list(f) for f in self.faces],
            "singletons": list(self.singletons),
            "masses": list(self.masses) if self.masses is not None else None,
            "singleton_masses": (
                list(self.singleton_masses)
                if self.singleton_masses is not None else None
            ),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SupportSet":
        payload = json.loads(text)
        return cls(
            d=payload["d"],
            faces=tuple(make_face(f) for f in payload["faces"]),
            singletons=tuple(payload["singletons"]),
            masses=tuple(payload["masses"]) if payload.get("masses") else None,
            singleton_masses=(
                tuple(payload["singleton_masses"])
                if payload.get("singleton_masses") else None
            ),
        )


def assign_rectangle(v: np.ndarray, t: float, eps: float) -> Face:
    """Rectangle membership of one point at scale ``t``.

    Returns the set of coordinates with ``v_j / t > eps``; requires the
    rescaled point to reach sup-norm 1, otherwise it lies in no rectangle.
    """
    scaled = np.asarray(v, dtype=float) / t
    if scaled.max() < 1.0:
        raise BelowScale(f"sup-norm {scaled.max():.3g} below 1 at scale {t}")
    return tuple(np.nonzero(scaled > eps)[0].tolist())


def estimate_mass(vhat, k: float, eps: float = 0.1) -> MassTable:
    """Count points per thickened rectangle at scale ``n/k``.

    ``vhat`` is a standardized dataset or plain matrix.  Each of the
    ``n_above`` rows reaching sup-norm ``n/k`` contributes ``1/k`` to the
    mass of exactly one face, so masses sum to ``n_above / k``.
    """
    v = vhat.v if isinstance(vhat, StandardizedDataset) else np.asarray(vhat, float)
    n = v.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    t = n / k
    above = v[(v.max(axis=1) / t) >= 1.0]
    counts: dict[Face, int] = {}
    for row in above > (eps * t):
        face = tuple(np.nonzero(row)[0].tolist())
        counts[face] = counts.get(face, 0) + 1
    entries = {face: cnt / k for face, cnt in counts.items()}
    return MassTable(
        entries=entries, k=k, eps=eps, scale=t,
        n_above=above.shape[0], d=v.shape[1],
    )


def _drop_nested(survivors: list[tuple[Face, float]]) -> list[tuple[Face, float]]:
    """Keep the heavier of any nested pair (mass tie: lexicographically
    smaller face wins)."""
    keep = sorted(survivors, key=lambda fm: (-fm[1], fm[0]))
    out: list[tuple[Face, float]] = []
    for face, mass in keep:
        fset = set(face)
        nested_with = None
        for other, _ in out:
            oset = set(other)
            if fset <= oset or oset <= fset:
                nested_with = other
                break
        if nested_with is None:
            out.append((face, mass))
        else:
            warnings.warn(
                f"dropping face {face} (mass {mass:.4g}) nested with "
                f"heavier {nested_with}",
                stacklevel=3,
            )
    return out


def recover_support(mass: MassTable, mu_min: float | None = None) -> SupportSet:
    """Faces with non-negligible estimated mass, heaviest first.

    ``mu_min`` defaults to 0.5% of the total observed mass.  Nested
    survivors are resolved in favor of the heavier face.
    """
    if mu_min is None:
        mu_min = 0.005 * mass.total_mass()
    if mu_min < 0:
        raise ValueError(f"mu_min must be >= 0, got {mu_min}")
    survivors = [(f, m) for f, m in mass.entries.items() if m > mu_min]
    if not survivors:
        raise EmptySupport(f"no face has mass above mu_min={mu_min:.4g}")
    survivors = _drop_nested(survivors)
    faces = [(f, m) for f, m in survivors if len(f) >= 2]
    singles = sorted((f[0], m) for f, m in survivors if len(f) == 1)
    faces.sort(key=lambda fm: (-fm[1], fm[0]))
    return SupportSet(
        d=mass.d,
        faces=tuple(f for f, _ in faces),
        singletons=tuple(j for j, _ in singles),
        masses=tuple(m for _, m in faces),
        singleton_masses=tuple(m for _, m in singles),
    )


def ensure_coverage(support: SupportSet) -> SupportSet:
    """Promote coordinates covered by no face and no singleton to singletons.

    The mixture requires every coordinate to carry a component; mass
    thresholding can drop coordinates entirely, so the fitting pipeline
    re-adds them as zero-mass singleton components.
    """
    covered = support.covered()
    covered[list(support.singletons)] = True
    missing = np.nonzero(~covered)[0]
    if missing.size == 0:
        return support
    warnings.warn(
        f"{missing.size} uncovered coordinate(s) promoted to singleton "
        f"components: {missing.tolist()}",
        stacklevel=2,
    )
    singles = sorted(list(support.singletons) + missing.tolist())
    sm = None
    if support.singleton_masses is not None:
        by_coord = dict(zip(support.singletons, support.singleton_masses))
        sm = tuple(by_coord.get(j, 0.0) for j in singles)
    return SupportSet(
        d=support.d,
        faces=support.faces,
        singletons=tuple(singles),
        masses=support.masses,
        singleton_masses=sm,
    )


def align_support(estimated: SupportSet, reference: SupportSet) -> SupportSet:
    """Reorder ``estimated`` to match ``reference`` component order.

    Raises :class:`SupportMismatch` unless both hold exactly the same faces
    and singletons.  Needed before entrywise parameter comparisons, since
    recovered faces are ordered by mass, not by generation order.
    """
    if estimated.d != reference.d:
        raise SupportMismatch(
            f"dimension {estimated.d} != reference {reference.d}"
        )
    if set(estimated.faces) != set(reference.faces):
        raise SupportMismatch("face sets differ")
    if set(estimated.singletons) != set(reference.singletons):
        raise SupportMismatch("singleton sets differ")
    masses = None
    if estimated.masses is not None:
        by_face = dict(zip(estimated.faces, estimated.masses))
        masses = tuple(by_face[f] for f in reference.faces)
    sm = None
    if estimated.singleton_masses is not None:
        by_coord = dict(zip(estimated.singletons, estimated.singleton_masses))
        sm = tuple(by_coord[j] for j in reference.singletons)
    return SupportSet(
        d=reference.d,
        faces=reference.faces,
        singletons=reference.singletons,
        masses=masses,
        singleton_masses=sm,
    )
