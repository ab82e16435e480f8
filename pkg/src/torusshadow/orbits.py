"""Generation, validation, and serialization of delta-pseudo-orbits.

A pseudo-orbit is a finite indexed window of points whose every forward
step lands within a certified defect delta of the true image.  Orbits come
from seeded uniform noise injection or from iterating a nearby map g, whose
C0 distance to f is certified by a grid supremum plus a Lipschitz slack.

Noise is drawn from numpy's default PCG64 generator; reproducibility across
implementations is by the recorded orbit files, not by PRNG identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import torus_distance, wrap
from .models import TWO_PI, ModelError, SkewModel

__all__ = [
    "PseudoOrbit",
    "PerturbedMap",
    "generate_noisy",
    "from_map",
    "validate",
    "write_orbit",
    "read_orbit",
]


@dataclass
class PseudoOrbit:
    """Indexed window of points with a certified forward defect."""

    n_min: int
    n_max: int
    points: np.ndarray  # shape (n_max - n_min + 1, 3)
    delta: float
    model_name: str = "unknown"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.n_max - self.n_min + 1
        if self.points.shape != (expected, 3):
            raise ValueError(
                f"orbit window [{self.n_min}, {self.n_max}] needs {expected} points, "
                f"got shape {self.points.shape}"
            )
        self.points.setflags(write=False)

    def point(self, k: int) -> np.ndarray:
        if not self.n_min <= k <= self.n_max:
            raise IndexError(f"index {k} outside window [{self.n_min}, {self.n_max}]")
        return self.points[k - self.n_min]

    def indices(self):
        return range(self.n_min, self.n_max + 1)


def _ball_noise(rng, radius: float) -> np.ndarray:
    """Uniform draw from the closed radius-ball in R^3."""
    v = rng.normal(size=3)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros(3)
    return v * (radius * rng.random() ** (1.0 / 3.0) / norm)


def generate_noisy(sys: SkewModel, x0, window, delta: float, seed: int) -> PseudoOrbit:
    """Seeded pseudo-orbit: every step is the true image plus uniform noise
    of norm <= delta.

    Backward indices are filled as x_{k-1} = f^-1(x_k + e_k) so the forward
    defect at every step is exactly |e_k| <= delta, both directions.
    """
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    n_min, n_max = int(window[0]), int(window[1])
    if not n_min <= 0 <= n_max:
        raise ValueError(f"window [{n_min}, {n_max}] must contain index 0")
    rng = np.random.default_rng(seed)
    x0 = wrap(np.asarray(x0, dtype=float))
    pts = np.empty((n_max - n_min + 1, 3))
    pts[-n_min] = x0
    x = x0
    for k in range(1, n_max + 1):
        x = wrap(sys.apply(x) + (_ball_noise(rng, delta) if delta > 0.0 else 0.0))
        pts[k - n_min] = x
    x = x0
    for k in range(-1, n_min - 1, -1):
        x = sys.apply_inverse(wrap(x + (_ball_noise(rng, delta) if delta > 0.0 else 0.0)))
        pts[k - n_min] = x
    return PseudoOrbit(n_min, n_max, pts, delta,
                       meta={"kind": "noisy", "seed": seed, "rng": "numpy-pcg64"})


def validate(sys: SkewModel, orbit: PseudoOrbit):
    """Exact maxima of the forward and backward defects over the window.

    Forward: d(f(x_k), x_{k+1});  backward: d(f^-1(x_k), x_{k-1}).
    """
    fwd = 0.0
    bwd = 0.0
    for k in range(orbit.n_min, orbit.n_max):
        fwd = max(fwd, torus_distance(sys.apply(orbit.point(k)), orbit.point(k + 1)))
    for k in range(orbit.n_max, orbit.n_min, -1):
        bwd = max(bwd, torus_distance(sys.apply_inverse(orbit.point(k)), orbit.point(k - 1)))
    return fwd, bwd


class PerturbedMap:
    """g(x) = f(x) + v(x) for a finite trigonometric displacement field v.

    Each mode perturbs one coordinate: v_j(x) += s*sin(2 pi m.x) +
    c*cos(2 pi m.x) with m an integer frequency triple.  The C0 distance
    d(f, g) = sup |v| is certified on a sampling grid plus a Lipschitz
    slack term and must stay below the declared amplitude bound.
    """

    def __init__(self, sys: SkewModel, modes, amplitude_bound: float,
                 certification_grid: int = 64):
        self.sys = sys
        self.modes = [(int(j), int(m1), int(m2), int(m3), float(s), float(c))
                      for (j, m1, m2, m3, s, c) in modes]
        for (j, *_rest) in self.modes:
            if j not in (0, 1, 2):
                raise ModelError(f"perturbation coordinate must be 0, 1, or 2, got {j}")
        self.amplitude_bound = float(amplitude_bound)
        self.certification_grid = int(certification_grid)
        # Lipschitz bound of the vector field: rss over coordinates of the
        # per-coordinate trig Lipschitz bounds.
        per_coord = [0.0, 0.0, 0.0]
        for (j, m1, m2, m3, s, c) in self.modes:
            per_coord[j] += TWO_PI * math.sqrt(m1 * m1 + m2 * m2 + m3 * m3) * math.hypot(s, c)
        self.lip_v = math.sqrt(sum(l * l for l in per_coord))
        self._certified = None

    def displacement(self, x) -> np.ndarray:
        v = np.zeros(3)
        for (j, m1, m2, m3, s, c) in self.modes:
            th = TWO_PI * (m1 * x[0] + m2 * x[1] + m3 * x[2])
            v[j] += s * math.sin(th) + c * math.cos(th)
        return v

    def displacement_vec(self, X: np.ndarray) -> np.ndarray:
        V = np.zeros_like(X)
        for (j, m1, m2, m3, s, c) in self.modes:
            th = TWO_PI * (m1 * X[:, 0] + m2 * X[:, 1] + m3 * X[:, 2])
            V[:, j] += s * np.sin(th) + c * np.cos(th)
        return V

    def apply(self, x) -> np.ndarray:
        return wrap(self.sys.apply(x) + self.displacement(x))

    def apply_inverse(self, x, residual_tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
        """Invert g by fixed-point iteration y -> f^-1(x - v(y)).

        Converges at rate Lip(f^-1) * Lip(v) << 1 for the small fields in
        scope; iterated until d(g(y), x) <= residual_tol.
        """
        x = np.asarray(x, dtype=float)
        y = self.sys.apply_inverse(x)
        for _ in range(max_iter):
            y_next = self.sys.apply_inverse(wrap(x - self.displacement(y)))
            y = y_next
            if torus_distance(self.apply(y), x) <= residual_tol:
                return y
        raise RuntimeError(
            f"perturbed-map inversion did not reach residual {residual_tol:g}"
        )

    def certified_bound(self) -> float:
        """Certified sup d(f, g): grid supremum of |v| plus Lipschitz slack."""
        if self._certified is None:
            n = self.certification_grid
            axis = (np.arange(n) + 0.5) / n
            G = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
            sup = 0.0
            # chunked to bound memory on fine grids
            for start in range(0, G.shape[0], 262144):
                V = self.displacement_vec(G[start:start + 262144])
                sup = max(sup, float(np.max(np.linalg.norm(V, axis=1))))
            slack = self.lip_v * (math.sqrt(3.0) / (2.0 * n))
            self._certified = sup + slack
            if self._certified > self.amplitude_bound:
                raise ModelError(
                    f"certified d(f, g) = {self._certified:.6e} exceeds declared "
                    f"amplitude bound {self.amplitude_bound:.6e}"
                )
        return self._certified


def from_map(sys: SkewModel, g: PerturbedMap, x0, window) -> PseudoOrbit:
    """The g-orbit of x0 as a pseudo-orbit of f, with delta = certified d(f, g)."""
    n_min, n_max = int(window[0]), int(window[1])
    if not n_min <= 0 <= n_max:
        raise ValueError(f"window [{n_min}, {n_max}] must contain index 0")
    x0 = wrap(np.asarray(x0, dtype=float))
    pts = np.empty((n_max - n_min + 1, 3))
    pts[-n_min] = x0
    x = x0
    for k in range(1, n_max + 1):
        x = g.apply(x)
        pts[k - n_min] = x
    x = x0
    for k in range(-1, n_min - 1, -1):
        x = g.apply_inverse(x)
        pts[k - n_min] = x
    return PseudoOrbit(n_min, n_max, pts, g.certified_bound(),
                       meta={"kind": "perturbed"})


# -- orbit files --------------------------------------------------------------


def write_orbit(orbit: PseudoOrbit, path, model_name: str = "") -> None:
    """Line-oriented orbit file; 17 significant digits round-trip doubles."""
    with open(path, "w") as fh:
        fh.write(f"# model: {model_name or orbit.model_name}\n")
        fh.write(f"# delta: {orbit.delta:.17g}\n")
        fh.write(f"# window: {orbit.n_min} {orbit.n_max}\n")
        for key in ("seed", "rng", "kind"):
            if key in orbit.meta:
                fh.write(f"# {key}: {orbit.meta[key]}\n")
        for k in orbit.indices():
            p = orbit.point(k)
            fh.write(f"{k} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def read_orbit(path) -> PseudoOrbit:
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
    if "window" not in header or "delta" not in header:
        raise ValueError(f"orbit file {path} is missing window/delta headers")
    n_min, n_max = (int(tok) for tok in header["window"].split())
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(n_min, n_max + 1)):
        raise ValueError(f"orbit file {path} indices do not cover the declared window")
    pts = np.array([[r[1], r[2], r[3]] for r in rows])
    return PseudoOrbit(n_min, n_max, pts, float(header["delta"]),
                       model_name=header.get("model", "unknown"),
                       meta={k: v for k, v in header.items()
                             if k not in ("window", "delta", "model")})
