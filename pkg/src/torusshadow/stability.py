"""Topological quasi-stability: sampled semiconjugacy for a perturbed map.

For g C0-close to f, every g-orbit is a pseudo-orbit of f, so the
quasi-shadowing engine assigns to each point x the anchor pi(x) = y*_0 of
the sequence tracing the g-orbit of x.  Along the center fibration this
yields the intertwining pi(g(x)) = tau_x(f(pi(x))) with tau_x the signed
fiber motion at the next step.  pi is sampled on a regular lattice; the
reports below check the intertwining identity by recomputation, estimate a
continuity modulus, test epsilon-density of the image as the surjectivity
proxy, and probe plaque expansiveness on pairs of center-pseudo-orbits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import fiber_displacement, torus_distance, wrap
from .models import SkewModel
from .orbits import PerturbedMap, from_map
from .shadowing import (
    ConstructionError,
    InsufficientWindowError,
    ParameterError,
    ShadowingParams,
    delta_for_epsilon,
    quasi_shadow,
)

__all__ = [
    "SemiConjugacy",
    "semiconjugacy",
    "check_identity",
    "continuity_report",
    "surjectivity_density",
    "plaque_expansiveness_probe",
    "write_semiconjugacy",
]


@dataclass
class SemiConjugacy:
    """pi and tau sampled on a regular lattice, with per-node residuals."""

    grid_res: tuple
    nodes: np.ndarray        # (N, 3) lattice points
    pi: np.ndarray           # (N, 3) pi(x) = y*_0 of the g-orbit trace
    pi_g: np.ndarray         # (N, 3) pi(g(x)) = y*_1 of the same trace
    tau: np.ndarray          # (N,) signed center motion from f(pi(x)) to pi(g(x))
    residual: np.ndarray     # (N,) recomputed identity residual
    window: int
    params: ShadowingParams
    failures: list = field(default_factory=list)
    model_name: str = "unknown"

    def flat_index(self, i1: int, i2: int, i3: int) -> int:
        n1, n2, n3 = self.grid_res
        return (i1 % n1) * n2 * n3 + (i2 % n2) * n3 + (i3 % n3)

    @property
    def sup_pi_id(self) -> float:
        ok = ~np.isnan(self.pi[:, 0])
        if not np.any(ok):
            return math.inf
        d = (self.pi[ok] - self.nodes[ok]) % 1.0
        d[d >= 1.0] = 0.0
        d[d >= 0.5] -= 1.0
        return float(np.max(np.linalg.norm(d, axis=1)))


def _lattice(grid_res) -> np.ndarray:
    n1, n2, n3 = grid_res
    g1 = np.arange(n1) / n1
    g2 = np.arange(n2) / n2
    g3 = np.arange(n3) / n3
    return np.stack(np.meshgrid(g1, g2, g3, indexing="ij"), axis=-1).reshape(-1, 3)


def semiconjugacy(sys: SkewModel, g: PerturbedMap, grid_res, N: int, epsilon: float,
                  params: ShadowingParams = None) -> SemiConjugacy:
    """Sample pi on a grid by quasi-shadowing each node's g-orbit.

    Every node uses identical parameters and the window [-N, N].  The
    certified d(f, g) must be below the admissible defect; per-node
    shadowing failures are recorded in the report rather than raised.
    """
    if params is None:
        params = delta_for_epsilon(sys, epsilon)
    bound = g.certified_bound()
    if bound >= params.delta:
        raise ParameterError(
            f"certified d(f, g) = {bound:.4e} is not below the admissible "
            f"defect {params.delta:.4e} for epsilon = {epsilon:g}"
        )
    nodes = _lattice(grid_res)
    n = nodes.shape[0]
    pi = np.full((n, 3), np.nan)
    pi_g = np.full((n, 3), np.nan)
    tau = np.full(n, np.nan)
    residual = np.full(n, np.nan)
    failures = []
    for i in range(n):
        try:
            orbit = from_map(sys, g, nodes[i], (-N, N))
            trace = quasi_shadow(sys, orbit, epsilon, params=params)
        except (ConstructionError, InsufficientWindowError, ParameterError) as exc:
            failures.append((i, str(exc)))
            continue
        pi[i] = trace.point(0)
        pi_g[i] = trace.point(1)
        tau[i] = trace.center_motions[trace.index(1)]
        fp = sys.apply(pi[i])
        residual[i] = max(
            torus_distance(fp[:2], pi_g[i][:2]),
            abs(fiber_displacement(fp[2], pi_g[i][2]) - tau[i]),
        )
    return SemiConjugacy(grid_res=tuple(grid_res), nodes=nodes, pi=pi, pi_g=pi_g,
                         tau=tau, residual=residual, window=N, params=params,
                         failures=failures)


@dataclass
class IdentityReport:
    passed: bool
    max_base_mismatch: float
    max_fiber_residual: float
    failing_nodes: list

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} identity: max_base_mismatch={self.max_base_mismatch:.6e} "
                f"max_fiber_residual={self.max_fiber_residual:.6e} "
                f"failing_nodes={len(self.failing_nodes)}")


def check_identity(sys: SkewModel, sc: SemiConjugacy, g: PerturbedMap,
                   tol: float = 1e-8) -> IdentityReport:
    """Recompute both sides of the intertwining identity at every node.

    pi(g(x)) is read from the node's own trace; f(pi(x)) is applied fresh.
    The base coordinates must agree within tol and the fiber gap must
    equal the stored tau within tol.
    """
    failing = []
    max_base = 0.0
    max_fib = 0.0
    for i in range(sc.nodes.shape[0]):
        if np.any(np.isnan(sc.pi[i])):
            failing.append(i)
            continue
        fp = sys.apply(sc.pi[i])
        base_mismatch = torus_distance(fp[:2], sc.pi_g[i][:2])
        fib_res = abs(fiber_displacement(fp[2], sc.pi_g[i][2]) - sc.tau[i])
        max_base = max(max_base, base_mismatch)
        max_fib = max(max_fib, fib_res)
        if base_mismatch >= tol or fib_res >= tol:
            failing.append(i)
    return IdentityReport(passed=not failing, max_base_mismatch=max_base,
                          max_fiber_residual=max_fib, failing_nodes=failing)


@dataclass
class ContinuityReport:
    max_ratio_per_axis: tuple
    median_ratio: float
    histogram: list            # (edge_lo, edge_hi, count) triples
    anomalies: list            # flat node indices with an incident ratio > 10x median

    def summary(self) -> str:
        axes = " ".join(f"{r:.4g}" for r in self.max_ratio_per_axis)
        return (f"continuity: max_ratio_per_axis=[{axes}] median={self.median_ratio:.4g} "
                f"anomalies={len(self.anomalies)}")


def continuity_report(sc: SemiConjugacy) -> ContinuityReport:
    """Difference-quotient table d(pi(x), pi(x')) / d(x, x') over grid edges.

    Qualitative by design: no PASS/FAIL, but any ratio above 10x the median
    flags its incident nodes as anomalies.
    """
    n1, n2, n3 = sc.grid_res
    if min(n1, n2, n3) < 8:
        raise ValueError("continuity_report needs grid resolution >= 8 per axis")
    ratios_per_axis = []
    flagged = set()
    all_ratios = []
    edges = []
    for axis, shift in enumerate(((1, 0, 0), (0, 1, 0), (0, 0, 1))):
        worst = 0.0
        for i1 in range(n1):
            for i2 in range(n2):
                for i3 in range(n3):
                    a = sc.flat_index(i1, i2, i3)
                    b = sc.flat_index(i1 + shift[0], i2 + shift[1], i3 + shift[2])
                    if np.any(np.isnan(sc.pi[a])) or np.any(np.isnan(sc.pi[b])):
                        continue
                    dx = torus_distance(sc.nodes[a], sc.nodes[b])
                    if dx == 0.0:
                        continue
                    r = torus_distance(sc.pi[a], sc.pi[b]) / dx
                    worst = max(worst, r)
                    all_ratios.append(r)
                    edges.append((a, b, r))
        ratios_per_axis.append(worst)
    med = float(np.median(all_ratios)) if all_ratios else 0.0
    for (a, b, r) in edges:
        if med > 0.0 and r > 10.0 * med:
            flagged.add(a)
            flagged.add(b)
    hist, bin_edges = np.histogram(all_ratios, bins=10)
    histogram = [(float(bin_edges[i]), float(bin_edges[i + 1]), int(hist[i]))
                 for i in range(len(hist))]
    return ContinuityReport(max_ratio_per_axis=tuple(ratios_per_axis),
                            median_ratio=med, histogram=histogram,
                            anomalies=sorted(flagged))


@dataclass
class SurjectivityReport:
    density_gap: float
    sup_pi_id: float
    epsilon: float
    grid_spacing: float
    resolution_sufficient: bool
    passed: bool

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = "" if self.resolution_sufficient else " (grid spacing exceeds epsilon)"
        return (f"{status} surjectivity: density_gap={self.density_gap:.6e} "
                f"sup_d(pi,id)={self.sup_pi_id:.6e} epsilon={self.epsilon:g}{note}")


def surjectivity_density(sc: SemiConjugacy, epsilon: float) -> SurjectivityReport:
    """Empirical surjectivity proxy: the pi-image is epsilon-dense and pi
    stays within epsilon of the identity."""
    ok = ~np.isnan(sc.pi[:, 0])
    image = sc.pi[ok]
    gap = 0.0
    # nearest pi-image for every grid node, chunked pairwise distances
    for start in range(0, sc.nodes.shape[0], 256):
        block = sc.nodes[start:start + 256]
        d = (image[None, :, :] - block[:, None, :]) % 1.0
        d[d >= 1.0] = 0.0
        d[d >= 0.5] -= 1.0
        dist = np.sqrt(np.sum(d * d, axis=2))
        gap = max(gap, float(np.max(np.min(dist, axis=1))))
    spacing = max(1.0 / r for r in sc.grid_res)
    sufficient = spacing <= epsilon
    sup = sc.sup_pi_id
    return SurjectivityReport(density_gap=gap, sup_pi_id=sup, epsilon=epsilon,
                              grid_spacing=spacing, resolution_sufficient=sufficient,
                              passed=(gap < epsilon and sup < epsilon))


# -- plaque expansiveness probe -------------------------------------------------


@dataclass
class ProbeTrial:
    kind: str
    max_pair_distance: float
    base_mismatch: float
    separation_steps: int = -1
    predicted_steps: int = -1
    conforms: bool = True


@dataclass
class ProbeReport:
    eta: float
    trials: list
    passed: bool

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        n_adv = sum(1 for t in self.trials if t.kind == "adversarial")
        return (f"{status} plaque-expansiveness probe: eta={self.eta:g} "
                f"trials={len(self.trials)} adversarial={n_adv}")


def _center_pseudo_orbit(sys: SkewModel, p0, z0: float, half: int, jitter, rng):
    """Orbit with exact base dynamics and fiber jitter <= eta per step."""
    n = 2 * half + 1
    pts = np.empty((n, 3))
    pts[half] = np.array([p0[0], p0[1], z0])
    x = pts[half]
    for i in range(half + 1, n):
        x = wrap(sys.apply(x) + np.array([0.0, 0.0, jitter * (2.0 * rng.random() - 1.0)]))
        pts[i] = x
    x = pts[half]
    for i in range(half - 1, -1, -1):
        x = sys.apply_inverse(wrap(x + np.array([0.0, 0.0, jitter * (2.0 * rng.random() - 1.0)])))
        pts[i] = x
    return pts


def plaque_expansiveness_probe(sys: SkewModel, eta: float, trials: int, seed: int,
                               half_window: int = 30) -> ProbeReport:
    """Probe the two sides of plaque expansiveness on the model family.

    Conforming trials: two center-pseudo-orbits over the same exact base
    orbit with independent fiber jitter; their base coordinates must agree
    within 1e-8 at every index (the concrete form of lying in common
    center plaques).  Adversarial trials: base points offset by 2*eta are
    never an eta-close pair and must separate past a fixed macroscopic
    threshold within ceil(log(threshold / 2 eta) / log(mu)) + 3 steps.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    rng = np.random.default_rng(seed)
    mu = abs(sys.eig_mu)
    threshold = 0.05
    out = []
    passed = True
    for _ in range(trials):
        p0 = rng.random(2)
        z0 = rng.random()
        a = _center_pseudo_orbit(sys, p0, z0, half_window, eta, rng)
        b = _center_pseudo_orbit(sys, p0, z0, half_window, eta, rng)
        dmax = max(torus_distance(a[i], b[i]) for i in range(a.shape[0]))
        base_mismatch = max(torus_distance(a[i, :2], b[i, :2]) for i in range(a.shape[0]))
        conforms = base_mismatch < 1e-8
        passed &= conforms
        out.append(ProbeTrial("same-base", dmax, base_mismatch, conforms=conforms))

        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        q0 = wrap(p0 + 2.0 * eta * direction)
        c = _center_pseudo_orbit(sys, q0, z0, half_window, eta, rng)
        sep = -1
        for step in range(half_window + 1):
            fwd = torus_distance(a[half_window + step], c[half_window + step])
            bwd = torus_distance(a[half_window - step], c[half_window - step])
            if max(fwd, bwd) > threshold:
                sep = step
                break
        predicted = math.ceil(math.log(threshold / (2.0 * eta)) / math.log(mu)) + 3
        conforms = 0 <= sep <= predicted
        passed &= conforms
        out.append(ProbeTrial("adversarial", dmax, base_mismatch,
                              separation_steps=sep, predicted_steps=predicted,
                              conforms=conforms))
    return ProbeReport(eta=eta, trials=out, passed=passed)


# -- semiconjugacy files ----------------------------------------------------------


def write_semiconjugacy(sc: SemiConjugacy, path, model_name: str = "",
                        perturbation: str = "") -> None:
    n1, n2, n3 = sc.grid_res
    p = sc.params
    with open(path, "w") as fh:
        fh.write(f"# model: {model_name or sc.model_name}\n")
        fh.write(f"# perturbation: {perturbation}\n")
        fh.write(f"# grid: {n1} {n2} {n3}\n")
        fh.write(f"# half_length: {sc.window}\n")
        for key, val in (("epsilon", p.epsilon), ("delta", p.delta), ("alpha", p.alpha),
                         ("r1", p.r1), ("r2", p.r2), ("limit_tol", p.limit_tol)):
            fh.write(f"# {key}: {val:.17g}\n")
        fh.write(f"# k: {p.k}\n")
        idx = 0
        for i1 in range(n1):
            for i2 in range(n2):
                for i3 in range(n3):
                    pi = sc.pi[idx]
                    fh.write(
                        f"{i1} {i2} {i3} {pi[0]:.17g} {pi[1]:.17g} {pi[2]:.17g} "
                        f"{sc.tau[idx]:.17g} {sc.residual[idx]:.17g}\n"
                    )
                    idx += 1
