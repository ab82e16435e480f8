"""Dynamically coherent skew products over hyperbolic toral automorphisms.

The model family is f(p, z) = (A p, z + omega + phi(p)) on T^3 = T^2 x S^1,
with A a hyperbolic integer matrix of determinant +-1 and phi a finite
trigonometric polynomial on the base.  The center bundle is exactly the
fiber direction, the base eigenframe gives the stable/unstable directions,
and the strong stable/unstable leaves are graphs over the base eigenlines
via convergent transfer series:

    h_s(p, q) = sum_{n>=0} phi(A^n p) - phi(A^n q)     (q on the stable line)
    h_u(p, q) = sum_{n>=1} phi(A^-n q) - phi(A^-n p)   (q on the unstable line)

so (q, z + h_s(p, q)) lies on the strong stable leaf of (p, z), and
similarly for h_u.  With phi == 0 and omega == 0 this degenerates to the
product of the toral automorphism with the identity circle fiber (the
"linear" model).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import minimal_displacement, torus_distance, wrap

TWO_PI = 2.0 * math.pi

# Parallelism tolerance for leaf-membership preconditions.
LEAF_PARALLEL_TOL = 1e-10


class ModelError(ValueError):
    """Invalid model data (non-hyperbolic matrix, bad determinant, ...)."""


class LeafError(ValueError):
    """A point is not on the leaf an operation requires."""


class IntersectionError(RuntimeError):
    """Leaf intersection failed: bad pair, lift ambiguity, or out of range."""


def _wrap1(v: float) -> float:
    r = v % 1.0
    return 0.0 if r >= 1.0 else r


def eigen_frame(matrix):
    """Stable/unstable eigendata of a hyperbolic 2x2 integer matrix.

    Returns (v_s, v_u, lam, mu) with A v_s = lam v_s, A v_u = mu v_u,
    |lam| < 1 < |mu|, and both eigenvectors unit norm with positive first
    component (second component decides if the first is zero).
    """
    a = np.asarray(matrix, dtype=float)
    if a.shape != (2, 2):
        raise ModelError(f"base matrix must be 2x2, got shape {a.shape}")
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(abs(det) - 1.0) > 1e-12:
        raise ModelError(f"base matrix must have |det| = 1, got det = {det}")
    tr = a[0, 0] + a[1, 1]
    disc = tr * tr - 4.0 * det
    if disc <= 0.0:
        raise ModelError("base matrix is not hyperbolic (complex eigenvalues)")
    root = math.sqrt(disc)
    t1 = float(tr + root) / 2.0
    t2 = float(tr - root) / 2.0
    mu, lam = (t1, t2) if abs(t1) >= abs(t2) else (t2, t1)
    if not (abs(lam) < 1.0 < abs(mu)):
        raise ModelError(
            f"base matrix is not hyperbolic: eigenvalues {lam}, {mu} on/inside unit circle"
        )

    def _vec(t):
        # (b, t - a) and (t - d, c) both solve (A - tI)v = 0; pick the better
        # conditioned one.
        v1 = np.array([a[0, 1], t - a[0, 0]])
        v2 = np.array([t - a[1, 1], a[1, 0]])
        v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
        v = v / np.linalg.norm(v)
        if v[0] < 0.0 or (v[0] == 0.0 and v[1] < 0.0):
            v = -v
        return v

    return _vec(lam), _vec(mu), lam, mu


@dataclass(frozen=True)
class SystemRates:
    """Certified one-step contraction/expansion rates along the leaves.

    `lam` bounds d(f(x), f(y)) / d(x, y) from above for y on the local
    stable leaf of x (and the mirror statement for unstable leaves under
    f^-1), in the flat metric, for leaf displacements up to `delta1`.
    For phi != 0 the leaves are curved in the fiber, so `lam` carries the
    transfer-slope factor sqrt(1 + (Lip(phi)/(1-|lam_A|))^2) on top of the
    base eigenvalue; mu = 1/lam.  The center rates are exactly 1 (the
    fiber derivative is 1).
    """

    lam: float
    mu: float
    lam_prime: float = 1.0
    mu_prime: float = 1.0
    delta1: float = 0.3


@dataclass(frozen=True)
class TransversalityConstants:
    """Intersection and holonomy constants for one system.

    L0 bounds the blowup of the two-leaf intersection solve (conditioning
    of [v_u | -v_s] times a 1.1 safety factor), delta0 is the validity
    radius, and (r1, r2, alpha) are the holonomy modulus data: points
    within r2 on a transversal map within alpha under center holonomy
    inside plaques of radius r1.
    """

    L0: float
    delta0: float
    r1: float
    r2: float
    alpha: float


class SkewModel:
    """A skew product f(p, z) = (A p, z + omega + phi(p)) on T^3."""

    def __init__(self, matrix, omega=0.0, phi_modes=(), series_tol=1e-12):
        self.A = np.asarray(matrix, dtype=np.int64)
        if self.A.shape != (2, 2):
            raise ModelError("base matrix must be 2x2")
        self.v_s, self.v_u, self.eig_lam, self.eig_mu = eigen_frame(self.A)
        det = int(round(float(np.linalg.det(self.A))))
        self.A_inv = (np.array([[self.A[1, 1], -self.A[0, 1]],
                                [-self.A[1, 0], self.A[0, 0]]], dtype=np.int64) * det)
        self.omega = float(omega)
        self.modes = [(int(m1), int(m2), float(s), float(c)) for (m1, m2, s, c) in phi_modes]
        if series_tol <= 0.0:
            raise ModelError("series_tol must be positive")
        self.series_tol = float(series_tol)
        self.k = 1

        self.lip_phi = sum(
            TWO_PI * math.hypot(m1, m2) * math.hypot(s, c) for (m1, m2, s, c) in self.modes
        )
        # Slope bounds of the transfer graphs over their base lines; the
        # stable one includes the n = 0 term, the unstable one starts at 1.
        abs_lam = abs(self.eig_lam)
        self.leaf_slope_s = self.lip_phi / (1.0 - abs_lam)
        self.leaf_slope_u = self.lip_phi * abs_lam / (1.0 - abs_lam)

        # Certified flat-metric rates (exact eigenvalues for the linear model).
        lam_eff = abs_lam * math.sqrt(1.0 + self.leaf_slope_s ** 2)
        if lam_eff >= 1.0:
            raise ModelError("fiber coupling too strong: no certified leaf contraction")
        self.rates = SystemRates(lam=lam_eff, mu=1.0 / lam_eff)

        # Conditioning of the 2x2 intersection solve, with safety factor.
        frame = np.column_stack([self.v_u, -self.v_s])
        self.L0 = 1.1 * float(np.linalg.norm(np.linalg.inv(frame), ord=2))
        self.delta0 = 0.2
        self._frame_inv = np.linalg.inv(frame)

        self._scalar_A = (int(self.A[0, 0]), int(self.A[0, 1]),
                          int(self.A[1, 0]), int(self.A[1, 1]))
        self._scalar_A_inv = (int(self.A_inv[0, 0]), int(self.A_inv[0, 1]),
                              int(self.A_inv[1, 0]), int(self.A_inv[1, 1]))

    @property
    def base(self):
        return self

    @property
    def is_linear(self) -> bool:
        return self.omega == 0.0 and not any(s != 0.0 or c != 0.0 for (_, _, s, c) in self.modes)

    # -- fiber coupling ----------------------------------------------------

    def phi(self, p1: float, p2: float) -> float:
        total = 0.0
        for (m1, m2, s, c) in self.modes:
            th = TWO_PI * (m1 * p1 + m2 * p2)
            total += s * math.sin(th) + c * math.cos(th)
        return total

    def phi_vec(self, P: np.ndarray) -> np.ndarray:
        """phi evaluated on an (n, 2) array of base points."""
        total = np.zeros(P.shape[0])
        for (m1, m2, s, c) in self.modes:
            th = TWO_PI * (m1 * P[:, 0] + m2 * P[:, 1])
            total += s * np.sin(th) + c * np.cos(th)
        return total

    # -- the map -----------------------------------------------------------

    def base_apply(self, p1: float, p2: float):
        a11, a12, a21, a22 = self._scalar_A
        return _wrap1(a11 * p1 + a12 * p2), _wrap1(a21 * p1 + a22 * p2)

    def base_apply_inverse(self, p1: float, p2: float):
        a11, a12, a21, a22 = self._scalar_A_inv
        return _wrap1(a11 * p1 + a12 * p2), _wrap1(a21 * p1 + a22 * p2)

    def apply(self, x) -> np.ndarray:
        p1, p2, z = float(x[0]), float(x[1]), float(x[2])
        q1, q2 = self.base_apply(p1, p2)
        return np.array([q1, q2, _wrap1(z + self.omega + self.phi(p1, p2))])

    def apply_inverse(self, x) -> np.ndarray:
        p1, p2, z = float(x[0]), float(x[1]), float(x[2])
        q1, q2 = self.base_apply_inverse(p1, p2)
        return np.array([q1, q2, _wrap1(z - self.omega - self.phi(q1, q2))])

    def apply_vec(self, X: np.ndarray) -> np.ndarray:
        """The map on an (n, 3) array of points."""
        Q = np.empty_like(X)
        Q[:, 0] = (self.A[0, 0] * X[:, 0] + self.A[0, 1] * X[:, 1]) % 1.0
        Q[:, 1] = (self.A[1, 0] * X[:, 0] + self.A[1, 1] * X[:, 1]) % 1.0
        Q[:, 2] = (X[:, 2] + self.omega + self.phi_vec(X[:, :2])) % 1.0
        Q[Q >= 1.0] = 0.0
        return Q

    def apply_inverse_vec(self, X: np.ndarray) -> np.ndarray:
        Q = np.empty_like(X)
        Q[:, 0] = (self.A_inv[0, 0] * X[:, 0] + self.A_inv[0, 1] * X[:, 1]) % 1.0
        Q[:, 1] = (self.A_inv[1, 0] * X[:, 0] + self.A_inv[1, 1] * X[:, 1]) % 1.0
        Q[:, 2] = (X[:, 2] - self.omega - self.phi_vec(Q[:, :2])) % 1.0
        Q[Q >= 1.0] = 0.0
        return Q

    # -- transfer series ---------------------------------------------------

    def _leaf_coefficient(self, p, q, direction) -> float:
        """Signed coordinate of q - p along `direction`, after checking the
        displacement is parallel to it within LEAF_PARALLEL_TOL."""
        d = minimal_displacement(p, q)
        t = float(d @ direction)
        residual = float(np.linalg.norm(d - t * direction))
        if residual > LEAF_PARALLEL_TOL:
            raise LeafError(
                f"base displacement {d} is off the leaf line (residual {residual:.3e})"
            )
        return t

    def transfer_stable(self, p, q, tol: float = None) -> float:
        """Fiber offset h_s(p, q) so that (q, z + h_s) is on W^s((p, z)).

        q must lie on the local stable line of p.  The geometric tail
        bound Lip(phi) * |lam|^n * d(p, q) / (1 - |lam|) controls the
        truncation at series_tol (or a caller-supplied tighter tol).
        """
        t = self._leaf_coefficient(p, q, self.v_s)
        return self._transfer_series(p, q, t, stable=True, tol=tol)

    def transfer_unstable(self, p, q, tol: float = None) -> float:
        """Fiber offset h_u(p, q) for q on the local unstable line of p."""
        t = self._leaf_coefficient(p, q, self.v_u)
        return self._transfer_series(p, q, t, stable=False, tol=tol)

    def _transfer_series(self, p, q, t, stable: bool, tol: float = None) -> float:
        """Evaluate the transfer series with an analytically tracked displacement.

        The pair (A^n p, A^n q) is never iterated as two points: floating-point
        noise in the expanding direction of the iteration would separate them
        exponentially and turn the late terms into garbage.  Instead the anchor
        is iterated and the other point reconstructed as anchor + lam^n t v,
        which decays exactly; drift common to both evaluation points cancels in
        the phi difference.
        """
        if self.lip_phi == 0.0:
            return 0.0
        tol = self.series_tol if tol is None else tol
        a1, a2 = float(p[0]), float(p[1])
        cur = float(t)
        total = 0.0
        tail_factor = self.lip_phi / (1.0 - abs(self.eig_lam))
        if stable:
            step = self.base_apply
            rate = self.eig_lam          # A^n q = A^n p + lam^n t v_s
            v1, v2 = float(self.v_s[0]), float(self.v_s[1])
            sign = 1.0                   # sum of phi(A^n p) - phi(A^n q)
        else:
            step = self.base_apply_inverse
            rate = 1.0 / self.eig_mu     # A^-n q = A^-n p + mu^-n t v_u
            v1, v2 = float(self.v_u[0]), float(self.v_u[1])
            sign = -1.0                  # sum of phi(A^-n q) - phi(A^-n p)
            a1, a2 = step(a1, a2)
            cur *= rate
        n = 0
        while tail_factor * abs(cur) >= tol:
            b1, b2 = _wrap1(a1 + cur * v1), _wrap1(a2 + cur * v2)
            total += sign * (self.phi(a1, a2) - self.phi(b1, b2))
            a1, a2 = step(a1, a2)
            cur *= rate
            n += 1
            if n > 500:  # unreachable for valid tolerances; hard stop
                raise RuntimeError("transfer series failed to converge")
        return total

    def transfer_stable_vec(self, P, t: np.ndarray) -> np.ndarray:
        """Vectorized h_s(P, P + t v_s) over (n, 2) anchors and offsets t."""
        return self._transfer_series_vec(P, t, stable=True)

    def transfer_unstable_vec(self, P, t: np.ndarray) -> np.ndarray:
        return self._transfer_series_vec(P, t, stable=False)

    def _transfer_series_vec(self, P, t, stable):
        total = np.zeros(P.shape[0])
        if self.lip_phi == 0.0:
            return total
        A = self.A if stable else self.A_inv
        rate = self.eig_lam if stable else 1.0 / self.eig_mu
        v = self.v_s if stable else self.v_u
        sign = 1.0 if stable else -1.0
        Pc = P.copy()
        cur = np.asarray(t, dtype=float).copy()
        tail_factor = self.lip_phi / (1.0 - abs(self.eig_lam))

        def _step(R):
            return np.column_stack([
                (A[0, 0] * R[:, 0] + A[0, 1] * R[:, 1]) % 1.0,
                (A[1, 0] * R[:, 0] + A[1, 1] * R[:, 1]) % 1.0,
            ])

        if not stable:
            Pc = _step(Pc)
            cur *= rate
        while tail_factor * float(np.max(np.abs(cur))) >= self.series_tol:
            Q = (Pc + cur[:, None] * v) % 1.0
            total += sign * (self.phi_vec(Pc) - self.phi_vec(Q))
            Pc = _step(Pc)
            cur *= rate
        return total

    # -- leaf intersections (single point by transversality) ----------------

    def intersect(self, class_x: str, x, class_y: str, y, radius: float) -> np.ndarray:
        """Unique intersection of the local `class_x` leaf of x with the
        local `class_y` leaf of y.

        Supported pairs: (cu, s), (cs, u), and, within a common cu-/cs-leaf,
        (c, u) and (c, s).  The base point comes from the 2x2 eigenframe
        solve in the minimal lift; the fiber comes from the transfer series
        of the strong leaf.  Raises IntersectionError on lift ambiguity
        (base displacement > 0.25), a pair distance >= delta0, or a
        solution farther than L0 * radius from either input.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pair = (class_x, class_y)
        d_base = minimal_displacement(x[:2], y[:2])
        base_sep = float(np.linalg.norm(d_base))
        if base_sep > 0.25:
            raise IntersectionError(
                f"lift ambiguity: base displacement {base_sep:.4f} > 0.25"
            )
        # Center leaves are full vertical circles here, so the class containing
        # the center direction places no constraint on the fiber gap; only the
        # base separation limits solvability.
        if base_sep >= self.delta0:
            raise IntersectionError(
                f"points too far apart for leaf intersection: base separation "
                f"{base_sep:.4f} >= delta0 = {self.delta0}"
            )

        if pair == ("cu", "s") or pair == ("cs", "u"):
            dir_x = self.v_u if pair == ("cu", "s") else self.v_s
            dir_y = self.v_s if pair == ("cu", "s") else self.v_u
            # p_x + s*dir_x = p_y + t*dir_y, solved in the minimal lift.
            frame = np.column_stack([dir_x, -dir_y])
            s, t = np.linalg.solve(frame, d_base)
            q_base = wrap(y[:2] + t * dir_y)
            if pair == ("cu", "s"):
                fiber = _wrap1(y[2] + self.transfer_stable(y[:2], q_base))
            else:
                fiber = _wrap1(y[2] + self.transfer_unstable(y[:2], q_base))
            point = np.array([q_base[0], q_base[1], fiber])
        elif pair == ("c", "u") or pair == ("c", "s"):
            direction = self.v_u if pair == ("c", "u") else self.v_s
            d_yx = minimal_displacement(y[:2], x[:2])
            t = float(d_yx @ direction)
            off = float(np.linalg.norm(d_yx - t * direction))
            if off > LEAF_PARALLEL_TOL:
                raise IntersectionError(
                    f"({class_x},{class_y}) intersection requires a common "
                    f"{'cu' if pair[1] == 'u' else 'cs'}-leaf; residual {off:.3e}"
                )
            if pair == ("c", "u"):
                fiber = _wrap1(y[2] + self.transfer_unstable(y[:2], x[:2]))
            else:
                fiber = _wrap1(y[2] + self.transfer_stable(y[:2], x[:2]))
            point = np.array([x[0], x[1], fiber])
        else:
            raise IntersectionError(f"unsupported leaf pair ({class_x}, {class_y})")

        cap = self.L0 * radius
        # The x-side class always contains the center direction, so measure its
        # distance center-transversally (base only); the y-side leaf is strong,
        # so its full distance is pinned.
        dx = torus_distance(point[:2], x[:2])
        dy = torus_distance(point, y)
        if dx > cap or dy > cap:
            raise IntersectionError(
                f"intersection outside L0*radius: d(x)={dx:.3e}, d(y)={dy:.3e}, "
                f"cap={cap:.3e}"
            )
        return point

    def holonomy_along_center(self, x_anchor, source, target_class: str,
                              target_anchor, radius: float) -> np.ndarray:
        """Slide `source` along its center leaf onto the plaque
        W^{target_class}_radius(target_anchor).

        For these models center leaves are vertical circles, so the holonomy
        preserves the base coordinate and only moves the fiber.  `x_anchor`
        is the anchor of the surrounding cu- (for unstable holonomy) or cs-
        plaque; the source must lie within its radius.
        """
        if target_class not in ("u", "s"):
            raise IntersectionError(f"holonomy target must be 'u' or 's', got {target_class!r}")
        if torus_distance(source, x_anchor) > radius * self.L0:
            raise IntersectionError("holonomy source outside the anchor plaque")
        return self.intersect("c", source, target_class, target_anchor, radius)

    # -- iterates ------------------------------------------------------------

    def iterate(self, k: int) -> "IteratedSystem":
        return iterate_system(self, k)


class IteratedSystem:
    """The k-th power of a skew model.

    apply/apply_inverse are k-fold compositions, the rates are the k-th
    powers, and the foliation oracles (eigenframe, transfer series,
    intersections) are shared with the base system: the invariant leaves
    of f^k coincide with those of f.
    """

    def __init__(self, base: SkewModel, k: int):
        if k < 1:
            raise ModelError("iterate exponent k must be >= 1")
        self._base = base
        self.k = int(k)
        self.v_s, self.v_u = base.v_s, base.v_u
        self.eig_lam = base.eig_lam ** k
        self.eig_mu = base.eig_mu ** k
        self.rates = SystemRates(lam=base.rates.lam ** k, mu=base.rates.mu ** k,
                                 delta1=base.rates.delta1)
        self.L0 = base.L0
        self.delta0 = base.delta0
        self.series_tol = base.series_tol
        self.lip_phi = base.lip_phi

    @property
    def base(self):
        return self._base

    @property
    def is_linear(self):
        return self._base.is_linear

    def apply(self, x):
        for _ in range(self.k):
            x = self._base.apply(x)
        return x

    def apply_inverse(self, x):
        for _ in range(self.k):
            x = self._base.apply_inverse(x)
        return x

    def transfer_stable(self, p, q, tol: float = None):
        return self._base.transfer_stable(p, q, tol=tol)

    def transfer_unstable(self, p, q, tol: float = None):
        return self._base.transfer_unstable(p, q, tol=tol)

    def intersect(self, class_x, x, class_y, y, radius):
        return self._base.intersect(class_x, x, class_y, y, radius)

    def holonomy_along_center(self, x_anchor, source, target_class, target_anchor, radius):
        return self._base.holonomy_along_center(x_anchor, source, target_class,
                                                target_anchor, radius)


def iterate_system(sys: SkewModel, k: int) -> IteratedSystem:
    """System handle for f^k with shared foliation oracles."""
    return IteratedSystem(sys.base if isinstance(sys, IteratedSystem) else sys, k)


def inverse_system(sys: SkewModel) -> SkewModel:
    """The inverse map as a skew model in the same family.

    f^-1(p, z) = (A^-1 p, z - omega - phi(A^-1 p)); the composed coupling
    -phi(A^-1 p) is again a trigonometric polynomial with frequencies
    (A^-1)^T m.
    """
    At = sys.A_inv.T
    modes = []
    for (m1, m2, s, c) in sys.modes:
        mm = At @ np.array([m1, m2])
        modes.append((int(mm[0]), int(mm[1]), -s, -c))
    return SkewModel(sys.A_inv, omega=-sys.omega, phi_modes=modes,
                     series_tol=sys.series_tol)


def compute_constants(sys, epsilon: float) -> TransversalityConstants:
    """Explicit transversality/holonomy constants for one tracing accuracy.

    L0 certifies the intersection blowup (solve conditioning * 1.1),
    delta0 = 0.2 keeps every solve far from the lift-ambiguity radius,
    alpha = 0.45 * epsilon / 3 (linear in epsilon, with a 2x safety margin
    against the epsilon/3 cap the construction needs), and r2 is sized so
    the sampled holonomy modulus certificate d(h(z), h(z')) < alpha for
    d(z, z') < r2 passes with the transfer-slope factor accounted for.
    """
    if epsilon <= 0.0:
        raise ModelError("epsilon must be positive")
    alpha = 0.45 * epsilon / 3.0
    r1 = 0.99 * sys.L0 * sys.delta0 / 3.0
    slope = max(getattr(sys, "leaf_slope_s", sys.base.leaf_slope_s), 0.0)
    k_hol = math.sqrt(1.0 + slope * slope)
    r2 = min(alpha / (1.5 * k_hol), r1)
    return TransversalityConstants(L0=sys.L0, delta0=sys.delta0, r1=r1, r2=r2, alpha=alpha)


# -- sampling certificates --------------------------------------------------


def sample_stable_pairs(sys: SkewModel, n: int, seed: int, max_t: float):
    """Random pairs (x, y) with y on the local stable leaf of x, |t| <= max_t."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    t = rng.uniform(-max_t, max_t, size=n)
    Qb = (X[:, :2] + t[:, None] * sys.v_s) % 1.0
    Qb[Qb >= 1.0] = 0.0
    h = sys.transfer_stable_vec(X[:, :2], t)
    Y = np.column_stack([Qb, (X[:, 2] + h) % 1.0])
    Y[:, 2][Y[:, 2] >= 1.0] = 0.0
    return X, Y


def sample_unstable_pairs(sys: SkewModel, n: int, seed: int, max_t: float):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    t = rng.uniform(-max_t, max_t, size=n)
    Qb = (X[:, :2] + t[:, None] * sys.v_u) % 1.0
    Qb[Qb >= 1.0] = 0.0
    h = sys.transfer_unstable_vec(X[:, :2], t)
    Y = np.column_stack([Qb, (X[:, 2] + h) % 1.0])
    Y[:, 2][Y[:, 2] >= 1.0] = 0.0
    return X, Y


def certify_rates(sys: SkewModel, n: int = 10_000, seed: int = 0):
    """Worst sampled violation of the certified leaf rates.

    Returns (stable_excess, unstable_excess): max over samples of
    d(f(x), f(y)) - lam * d(x, y) on stable pairs within delta1, and the
    mirror under f^-1 on unstable pairs.  Both should be < 1e-12.
    """
    lam = sys.rates.lam
    d1 = sys.rates.delta1

    X, Y = sample_stable_pairs(sys, n, seed, d1)
    FX, FY = sys.apply_vec(X), sys.apply_vec(Y)
    ds = _pair_distances(X, Y)
    dfs = _pair_distances(FX, FY)
    stable_excess = float(np.max(dfs - lam * ds))

    X, Y = sample_unstable_pairs(sys, n, seed + 1, d1)
    BX, BY = sys.apply_inverse_vec(X), sys.apply_inverse_vec(Y)
    du = _pair_distances(X, Y)
    dbu = _pair_distances(BX, BY)
    unstable_excess = float(np.max(dbu - lam * du))
    return stable_excess, unstable_excess


def _pair_distances(X, Y):
    d = (Y - X) % 1.0
    d[d >= 1.0] = 0.0
    d[d >= 0.5] -= 1.0
    return np.linalg.norm(d, axis=1)


def certify_intersections(sys, consts: TransversalityConstants, n: int, seed: int,
                          delta: float):
    """Max ratio d(intersection, input) / d(x, y) over random pairs.

    Exercises both (cu, s) and (cs, u); the certificate passes when the
    returned max ratio is <= L0.
    """
    rng = np.random.default_rng(seed)
    delta = min(delta, 0.99 * consts.delta0)
    worst = 0.0
    for _ in range(n):
        x = rng.random(3)
        v = rng.normal(size=3)
        v *= (delta * rng.random() ** (1.0 / 3.0)) / np.linalg.norm(v)
        y = wrap(x + v)
        d = torus_distance(x, y)
        if d < 1e-9:
            continue
        for pair in (("cu", "s"), ("cs", "u")):
            pt = sys.intersect(pair[0], x, pair[1], y, delta)
            worst = max(worst, torus_distance(pt, x) / d, torus_distance(pt, y) / d)
    return worst


def certify_holonomy_modulus(sys, consts: TransversalityConstants, n: int, seed: int):
    """Max image distance of the center holonomy over source pairs within r2.

    Sources sit on one unstable plaque, targets on another inside a common
    cu-plaque; passes when the result is < alpha.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        anchor = rng.random(3)
        d1_anchor = anchor
        shift = rng.uniform(-consts.r1 / 2, consts.r1 / 2)
        fiber_shift = rng.uniform(-consts.r1 / 2, consts.r1 / 2)
        b = wrap(np.array([*(anchor[:2] + shift * sys.v_u), anchor[2] + fiber_shift]))
        d2_anchor = np.array([b[0], b[1], b[2]])
        t1 = rng.uniform(-consts.r2 / 2, consts.r2 / 2)
        t2 = t1 + rng.uniform(-consts.r2, consts.r2) / math.sqrt(2.0)
        pts = []
        for t in (t1, t2):
            base = wrap(d1_anchor[:2] + t * sys.v_u)
            fib = _wrap1(d1_anchor[2] + sys.transfer_unstable(d1_anchor[:2], base))
            pts.append(np.array([base[0], base[1], fib]))
        if torus_distance(pts[0], pts[1]) >= consts.r2:
            continue
        h0 = sys.holonomy_along_center(anchor, pts[0], "u", d2_anchor, consts.r1)
        h1 = sys.holonomy_along_center(anchor, pts[1], "u", d2_anchor, consts.r1)
        worst = max(worst, torus_distance(h0, h1))
    return worst


# -- model files -------------------------------------------------------------

_MODEL_FIELDS = ("matrix", "omega", "phi_modes", "series_tol")


def model_to_dict(sys: SkewModel) -> dict:
    return {
        "matrix": [[int(sys.A[0, 0]), int(sys.A[0, 1])],
                   [int(sys.A[1, 0]), int(sys.A[1, 1])]],
        "omega": sys.omega,
        "phi_modes": [{"freq": [m1, m2], "sin": s, "cos": c}
                      for (m1, m2, s, c) in sys.modes],
        "series_tol": sys.series_tol,
    }


def model_from_dict(data: dict) -> SkewModel:
    try:
        modes = [(m["freq"][0], m["freq"][1], m.get("sin", 0.0), m.get("cos", 0.0))
                 for m in data.get("phi_modes", [])]
        return SkewModel(data["matrix"], omega=data.get("omega", 0.0),
                         phi_modes=modes, series_tol=data.get("series_tol", 1e-12))
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelError(f"malformed model description: {exc}") from exc


def builtin_model(name: str) -> SkewModel:
    """The two reference systems: 'linear' and 'skew'."""
    if name == "linear":
        return SkewModel([[2, 1], [1, 1]])
    if name == "skew":
        return SkewModel([[2, 1], [1, 1]], omega=0.05,
                         phi_modes=[(1, 0, 0.02, 0.0)])
    raise ModelError(f"unknown builtin model {name!r}")


def load_model(path) -> SkewModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)


def save_model(sys: SkewModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(sys), fh, indent=2, sort_keys=True)
        fh.write("\n")
