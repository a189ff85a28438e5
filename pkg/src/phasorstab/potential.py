"""Voltage potential of a lossless phasor network and its Bregman divergence.

The potential in bus coordinates is

    Vp(theta, V) = sum_lines  (1/2) B_ik (V_i^2 + V_k^2 - 2 V_i V_k cos th_ik)
                 + sum_loads  (p0 * theta_i + q0 * ln V_i)

with loads consumption-positive (equivalently minus the generation-positive
load constants). Vp is defined up to the start point of the underlying line
integral; callers report it relative to a reference of their choosing.

Working coordinates are z = (theta, ln V): the trajectory identities pair
power deviations with d(theta) and d(ln V), and they are exact only in these
coordinates. At a stationary point of the divergence the Hessian signature
is the same as in (theta, V) coordinates, so convexity verdicts do not
depend on the choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkModel

__all__ = [
    "eval_vp",
    "grad_vp",
    "hessian_vp",
    "BregmanDivergence",
    "ConvexityReport",
    "convexity_check",
    "PathIntegralAccumulator",
    "PathSample",
    "ContourIntegralResult",
    "contour_integral",
    "path_dependence_experiment",
    "rectangle_contour_pair",
    "enclosed_area",
]


def eval_vp(net: NetworkModel, V, theta) -> float:
    """Voltage potential at a bus state (absolute; see module docstring)."""
    total = 0.0
    for line in net.lines:
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        d = theta[i] - theta[k]
        total += 0.5 * line.coupling * (
            V[i] * V[i] + V[k] * V[k] - 2.0 * V[i] * V[k] * math.cos(d)
        )
    for cp in net.constant_power:
        i = net.node_index[cp.bus]
        total += cp.p0 * theta[i] + cp.q0 * math.log(V[i])
    return total


def grad_vp(net: NetworkModel, V, theta) -> np.ndarray:
    """Gradient of Vp in (theta, ln V) coordinates, length 2n.

    Entry layout: all theta partials first, then all ln V partials. The
    theta partial at bus i is the line injection P_i plus the load constant
    p0_i; the ln V partial is Q_i plus q0_i. Both vanish at load buses of a
    solved state and equal the component injections at dynamic buses.
    """
    n = net.n_nodes
    g = np.zeros(2 * n)
    for line in net.lines:
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        d = theta[i] - theta[k]
        vv = V[i] * V[k]
        p = line.coupling * vv * math.sin(d)
        g[i] += p
        g[k] -= p
        g[n + i] += line.coupling * (V[i] * V[i] - vv * math.cos(d))
        g[n + k] += line.coupling * (V[k] * V[k] - vv * math.cos(d))
    for cp in net.constant_power:
        i = net.node_index[cp.bus]
        g[i] += cp.p0
        g[n + i] += cp.q0
    return g


def hessian_vp(net: NetworkModel, V, theta) -> np.ndarray:
    """Analytic Hessian of Vp in (theta, ln V) coordinates, 2n x 2n.

    Load terms are linear in these coordinates, so only lines contribute.
    The uniform angle-shift vector is in the kernel for every state.
    """
    n = net.n_nodes
    h = np.zeros((2 * n, 2 * n))
    for line in net.lines:
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        d = theta[i] - theta[k]
        c = line.coupling * V[i] * V[k] * math.cos(d)
        p = line.coupling * V[i] * V[k] * math.sin(d)
        # theta-theta block
        h[i, i] += c
        h[k, k] += c
        h[i, k] -= c
        h[k, i] -= c
        # theta-lnV block (and symmetric partner)
        h[i, n + i] += p
        h[n + i, i] += p
        h[i, n + k] += p
        h[n + k, i] += p
        h[k, n + i] -= p
        h[n + i, k] -= p
        h[k, n + k] -= p
        h[n + k, k] -= p
        # lnV-lnV block
        h[n + i, n + i] += line.coupling * (2.0 * V[i] * V[i]) - c
        h[n + k, n + k] += line.coupling * (2.0 * V[k] * V[k]) - c
        h[n + i, n + k] -= c
        h[n + k, n + i] -= c
    return h


def hessian_vp_polar(net: NetworkModel, V, theta) -> np.ndarray:
    """Hessian of Vp in (theta, V) coordinates, 2n x 2n.

    This is the curvature of the divergence anchored linearly in V rather
    than ln V. The two anchorings are different functions, so their
    Hessians at the same state are not congruent in general: loads
    contribute -q0/V^2 here and nothing in (theta, ln V). Kept as a
    diagnostic for convexity studies.
    """
    n = net.n_nodes
    h = np.zeros((2 * n, 2 * n))
    for line in net.lines:
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        d = theta[i] - theta[k]
        b = line.coupling
        c = b * V[i] * V[k] * math.cos(d)
        s = math.sin(d)
        h[i, i] += c
        h[k, k] += c
        h[i, k] -= c
        h[k, i] -= c
        h[i, n + i] += b * V[k] * s
        h[n + i, i] += b * V[k] * s
        h[i, n + k] += b * V[i] * s
        h[n + k, i] += b * V[i] * s
        h[k, n + i] -= b * V[k] * s
        h[n + i, k] -= b * V[k] * s
        h[k, n + k] -= b * V[i] * s
        h[n + k, k] -= b * V[i] * s
        h[n + i, n + i] += b
        h[n + k, n + k] += b
        h[n + i, n + k] -= b * math.cos(d)
        h[n + k, n + i] -= b * math.cos(d)
    for cp in net.constant_power:
        i = net.node_index[cp.bus]
        h[n + i, n + i] -= cp.q0 / (V[i] * V[i])
    return h


@dataclass
class BregmanDivergence:
    """Divergence W(z) = Vp(z) - Vp(z0) - grad Vp(z0) . (z - z0).

    z0 is the equilibrium under test, in (theta, ln V) coordinates. W and
    its gradient vanish at z0 and the Hessian equals the potential's.
    """

    net: NetworkModel
    V0: np.ndarray
    theta0: np.ndarray
    vp0: float = field(init=False)
    grad0: np.ndarray = field(init=False)
    z0: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.V0 = np.asarray(self.V0, dtype=float)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if np.any(self.V0 <= 0.0):
            raise ValueError("reference state must have positive voltages")
        self.vp0 = eval_vp(self.net, self.V0, self.theta0)
        self.grad0 = grad_vp(self.net, self.V0, self.theta0)
        self.z0 = np.concatenate([self.theta0, np.log(self.V0)])

    def value(self, V, theta) -> float:
        z = np.concatenate([np.asarray(theta, dtype=float),
                            np.log(np.asarray(V, dtype=float))])
        return eval_vp(self.net, V, theta) - self.vp0 - float(
            self.grad0 @ (z - self.z0)
        )

    def gradient(self, V, theta) -> np.ndarray:
        return grad_vp(self.net, V, theta) - self.grad0

    def hessian(self) -> np.ndarray:
        return hessian_vp(self.net, self.V0, self.theta0)


@dataclass(frozen=True)
class ConvexityReport:
    member: bool
    degenerate: bool
    eigenvalues: np.ndarray
    zero_eigenvalue: float | None
    zero_mode_cosine: float | None
    detail: str


def uniform_angle_mode(n: int) -> np.ndarray:
    """Unit vector of the uniform angle shift in (theta, ln V) coordinates."""
    v = np.zeros(2 * n)
    v[:n] = 1.0 / math.sqrt(n)
    return v


def convexity_check(
    hessian: np.ndarray,
    zero_tol: float = 1e-8,
    pos_tol: float = 1e-10,
    cosine_min: float = 0.999,
) -> ConvexityReport:
    """Membership test for the convexity set of an equilibrium.

    Member iff exactly one eigenvalue is zero to tolerance
    (|lam| <= zero_tol * lam_max), its eigenvector aligns with the uniform
    angle-shift direction, and every other eigenvalue is >= pos_tol.
    """
    n2 = hessian.shape[0]
    n = n2 // 2
    eigvals, eigvecs = np.linalg.eigh(hessian)
    lam_max = float(np.max(np.abs(eigvals))) if n2 else 0.0
    if lam_max <= pos_tol:
        return ConvexityReport(
            member=False,
            degenerate=True,
            eigenvalues=eigvals,
            zero_eigenvalue=None,
            zero_mode_cosine=None,
            detail="degenerate, not a member: Hessian vanishes to tolerance",
        )
    zero_idx = [j for j in range(n2) if abs(float(eigvals[j])) <= zero_tol * lam_max]
    if len(zero_idx) != 1:
        return ConvexityReport(
            member=False,
            degenerate=len(zero_idx) > 1,
            eigenvalues=eigvals,
            zero_eigenvalue=None,
            zero_mode_cosine=None,
            detail=(
                f"degenerate, not a member: {len(zero_idx)} near-zero eigenvalues "
                f"{[float(eigvals[j]) for j in zero_idx]}"
                if len(zero_idx) > 1
                else "not a member: no zero eigenvalue found"
            ),
        )
    j0 = zero_idx[0]
    cosine = abs(float(eigvecs[:, j0] @ uniform_angle_mode(n)))
    others_ok = all(
        float(eigvals[j]) >= pos_tol for j in range(n2) if j != j0
    )
    member = cosine >= cosine_min and others_ok
    if member:
        detail = "member: single zero mode is the uniform angle shift"
    elif not others_ok:
        neg = [float(v) for v in eigvals if v < pos_tol and abs(v) > zero_tol * lam_max]
        detail = f"not a member: non-positive eigenvalues {neg}"
    else:
        detail = f"not a member: zero mode misaligned (cosine {cosine:.6f})"
    return ConvexityReport(
        member=member,
        degenerate=False,
        eigenvalues=eigvals,
        zero_eigenvalue=float(eigvals[j0]),
        zero_mode_cosine=cosine,
        detail=detail,
    )


# -- trajectory path integrals ----------------------------------------------


@dataclass(frozen=True)
class PathSample:
    """Per-component terminal data at one instant, as needed for quadrature."""

    theta: dict[str, float]
    ln_v: dict[str, float]
    P: dict[str, float]
    Q: dict[str, float]


@dataclass
class PathIntegralAccumulator:
    """Running trapezoidal line integrals along a trajectory.

    Per component: the deviation integral of dP d(theta) + dQ d(ln V) with
    deviations taken against the supplied equilibrium injections. System
    total: the unshifted integral of P d(theta) + Q d(ln V) summed over
    dynamic components. Both are additive over trajectory segments and zero
    on constant trajectories.
    """

    P_eq: dict[str, float]
    Q_eq: dict[str, float]
    shifted: dict[str, float] = field(default_factory=dict)
    unshifted_total: float = 0.0

    def __post_init__(self) -> None:
        for cid in self.P_eq:
            self.shifted.setdefault(cid, 0.0)

    def advance(self, prev: PathSample, cur: PathSample) -> None:
        for cid in self.P_eq:
            d_theta = cur.theta[cid] - prev.theta[cid]
            d_lnv = cur.ln_v[cid] - prev.ln_v[cid]
            p_mid = 0.5 * (prev.P[cid] + cur.P[cid])
            q_mid = 0.5 * (prev.Q[cid] + cur.Q[cid])
            self.unshifted_total += p_mid * d_theta + q_mid * d_lnv
            self.shifted[cid] += (p_mid - self.P_eq[cid]) * d_theta + (
                q_mid - self.Q_eq[cid]
            ) * d_lnv

    def shifted_total(self) -> float:
        return sum(self.shifted[cid] for cid in self.P_eq)


# -- path-(in)dependence experiment ------------------------------------------


@dataclass(frozen=True)
class ContourIntegralResult:
    integral_a: complex
    integral_b: complex

    @property
    def re_diff(self) -> float:
        return (self.integral_a - self.integral_b).real

    @property
    def im_diff(self) -> float:
        return (self.integral_a - self.integral_b).imag


def contour_integral(g: float, b: float, contour: list[complex], n: int = 512) -> complex:
    """Line integral of conj(I) dV = conj(y) conj(V) dV along a polyline,
    for admittance y = g + jb, by composite trapezoid on each segment.

    The integrand is linear along a straight segment, so the trapezoid rule
    on any subdivision is exact up to rounding; n only densifies.
    """
    if len(contour) < 2:
        raise ValueError("contour needs at least two points")
    y_conj = complex(g, -b)
    total = 0j
    for a, c in zip(contour[:-1], contour[1:]):
        seg = c - a
        acc = 0j
        prev = y_conj * a.conjugate()
        for j in range(1, n + 1):
            z = a + seg * (j / n)
            cur = y_conj * z.conjugate()
            acc += 0.5 * (prev + cur)
            prev = cur
        total += acc * (seg / n)
    return total


def path_dependence_experiment(
    g: float,
    b: float,
    contour_a: list[complex],
    contour_b: list[complex],
    n: int = 512,
) -> ContourIntegralResult:
    """Compare the branch line integral along two contours sharing endpoints.

    By Green's theorem, the imaginary part differs by 2*g*(enclosed area)
    and the real part by 2*b*(enclosed area), the areas signed by the loop
    contour_a followed by reversed contour_b. Either part is
    path-independent exactly when its coefficient vanishes.
    """
    if abs(contour_a[0] - contour_b[0]) > 1e-12 or abs(
        contour_a[-1] - contour_b[-1]
    ) > 1e-12:
        raise ValueError("contours must share both endpoints")
    return ContourIntegralResult(
        integral_a=contour_integral(g, b, contour_a, n),
        integral_b=contour_integral(g, b, contour_b, n),
    )


def rectangle_contour_pair(width: float = 1.0, height: float = 1.0) -> tuple[
    list[complex], list[complex]
]:
    """Two polylines from 0 to width + j*height around a rectangle.

    Contour A runs along the real axis first, contour B along the imaginary
    axis first; the loop A + reversed(B) is counterclockwise and encloses
    area width*height.
    """
    corner = complex(width, height)
    a = [0j, complex(width, 0.0), corner]
    b = [0j, complex(0.0, height), corner]
    return a, b


def enclosed_area(contour_a: list[complex], contour_b: list[complex]) -> float:
    """Signed area enclosed by contour_a followed by reversed contour_b
    (shoelace formula); positive for counterclockwise loops."""
    loop = list(contour_a) + list(reversed(contour_b))[1:]
    area = 0.0
    for z0, z1 in zip(loop[:-1], loop[1:]):
        area += z0.real * z1.imag - z1.real * z0.imag
    return 0.5 * area
