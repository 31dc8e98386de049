"""Weight reparameterizations: L1/L2 weight normalization, L1-sphere
projection, the CReLU paired projection, and the alpha-blended pruning form.

Every forward rule here has a matching manual backward (vector-Jacobian
product) used by the network backward pass; all backward rules are checked
against central finite differences in the tests.

Sign conventions, kept deliberately distinct:
  * the weight-normalization subgradient uses sign(0) = 0 (a valid
    subgradient selection);
  * the projection operators use sign(w + eps) with eps = 1e-8, which is
    never zero, so projected points land on the sphere even from the
    interior of the ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROJ_EPS = 1e-8

__all__ = [
    "DegenerateInputError",
    "NormMode",
    "L1WN",
    "L2WN",
    "L1PROJ",
    "NONE",
    "blend",
    "ReparamVector",
    "effective_weight",
    "l1wn_subgradient",
    "find_threshold",
    "proj_l1_sphere",
    "proj_l1_crelu_pair",
    "rows_threshold",
    "rows_proj_l1_sphere",
    "rows_effective",
    "rows_backward",
    "pair_effective",
    "pair_backward",
]


class DegenerateInputError(ValueError):
    """Zero direction vector under a weight-normalization mode."""


@dataclass(frozen=True)
class NormMode:
    """Normalization tag; `alpha` is only meaningful for the blend."""

    tag: str  # "l1wn" | "l2wn" | "l1proj" | "blend" | "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.tag not in ("l1wn", "l2wn", "l1proj", "blend", "none"):
            raise ValueError(f"unknown normalization mode {self.tag!r}")
        if self.tag == "blend" and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("blend alpha must lie in [0, 1]")

    def encode(self) -> str:
        return f"blend:{self.alpha!r}" if self.tag == "blend" else self.tag

    @staticmethod
    def decode(s: str) -> "NormMode":
        if s.startswith("blend:"):
            return NormMode("blend", float(s.split(":", 1)[1]))
        return NormMode(s)


L1WN = NormMode("l1wn")
L2WN = NormMode("l2wn")
L1PROJ = NormMode("l1proj")
NONE = NormMode("none")


def blend(alpha: float) -> NormMode:
    return NormMode("blend", float(alpha))


@dataclass
class ReparamVector:
    v: np.ndarray
    g: float


# --- vector-level operations -------------------------------------------------


def effective_weight(p: ReparamVector, mode: NormMode) -> np.ndarray:
    """Materialize the weight vector from its (direction, length) form."""
    w = rows_effective(p.v[None, :], np.array([p.g]), mode)
    return w[0]


def l1wn_subgradient(p: ReparamVector, x: np.ndarray) -> np.ndarray:
    """Subgradient of <w, x> in the raw direction v under L1 normalization.

    Equals (g/||v||_1) M_w x with M_w = I - sign(w) w^T / ||w||_1, the
    oblique projector that annihilates w; the output is orthogonal to the
    effective weight.
    """
    v = np.asarray(p.v, dtype=np.float64)
    n = np.sum(np.abs(v))
    if n == 0.0:
        raise DegenerateInputError("zero direction vector under L1 weight normalization")
    return (p.g / n) * (x - (np.dot(v, x) / n) * np.sign(v))


def find_threshold(w: np.ndarray) -> float:
    """Shift that projects w onto the L1 unit sphere.

    Descending sort of |w|, running (cumsum - 1)/k, largest index where the
    running value still sits below the sorted magnitude.  Negative when w
    lies inside the unit ball (the projection then inflates onto the
    sphere).
    """
    return float(rows_threshold(np.asarray(w, dtype=np.float64)[None, :])[0])


def proj_l1_sphere(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of w onto the unit L1 sphere."""
    return rows_proj_l1_sphere(np.asarray(w, dtype=np.float64)[None, :])[0]


def proj_l1_crelu_pair(wp: np.ndarray, wm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Paired projection for CReLU residual weights.

    The threshold comes from the elementwise max of the two magnitude
    vectors, so max(|p+|, |p-|) lands exactly on the L1 sphere while each
    projected vector individually lies inside the ball.
    """
    wp = np.asarray(wp, dtype=np.float64)
    wm = np.asarray(wm, dtype=np.float64)
    tau = rows_threshold(np.maximum(np.abs(wp), np.abs(wm))[None, :])[0]
    pp = np.maximum(0.0, np.abs(wp) - tau) * np.sign(wp + PROJ_EPS)
    pm = np.maximum(0.0, np.abs(wm) - tau) * np.sign(wm + PROJ_EPS)
    return pp, pm


# --- row-wise kernels used by the network layers ------------------------------
#
# V is (h, d) with one direction vector per row; g is (1,) for a shared
# length or (h,) per-row.  Upstream gradients U have the shape of the
# effective weight matrix.


def rows_threshold(v: np.ndarray) -> np.ndarray:
    """Per-row L1-sphere projection thresholds."""
    u = -np.sort(-np.abs(v), axis=1)
    d = v.shape[1]
    c = (np.cumsum(u, axis=1) - 1.0) / np.arange(1, d + 1)
    idx = np.sum(c < u, axis=1)
    return c[np.arange(v.shape[0]), idx - 1]


def rows_proj_l1_sphere(v: np.ndarray) -> np.ndarray:
    tau = rows_threshold(v)
    return np.maximum(0.0, np.abs(v) - tau[:, None]) * np.sign(v + PROJ_EPS)


def _row_norms(v: np.ndarray, mode_tag: str) -> np.ndarray:
    if mode_tag == "l1wn":
        return np.sum(np.abs(v), axis=1)
    return np.sqrt(np.sum(v * v, axis=1))


def _g_col(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    # broadcast shared scalar or per-row lengths to a column
    if g.shape == (1,):
        return np.full((v.shape[0], 1), g[0])
    return g[:, None]


def rows_effective(v: np.ndarray, g: np.ndarray, mode: NormMode) -> np.ndarray:
    """Effective weight matrix for self-normalized rows."""
    if mode.tag == "none":
        return v.copy()
    gc = _g_col(v, g)
    if mode.tag in ("l1wn", "l2wn"):
        n = _row_norms(v, mode.tag)
        if np.any(n == 0.0):
            raise DegenerateInputError("zero direction row under weight normalization")
        return gc * v / n[:, None]
    if mode.tag == "l1proj":
        return gc * rows_proj_l1_sphere(v)
    # blend: convex combination of the L1-normalized and projected forms
    a = mode.alpha
    return (1.0 - a) * rows_effective(v, g, L1WN) + a * rows_effective(v, g, L1PROJ)


def _reduce_g(dg_rows: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.array([np.sum(dg_rows)]) if g.shape == (1,) else dg_rows


def _rows_backward_wn(v, g, u, tag):
    n = _row_norms(v, tag)
    gc = _g_col(v, g)
    vu = np.sum(v * u, axis=1)
    if tag == "l1wn":
        dv = gc / n[:, None] * (u - (vu / n)[:, None] * np.sign(v))
    else:
        dv = gc / n[:, None] * (u - (vu / (n * n))[:, None] * v)
    return dv, vu / n


def _rows_backward_proj(v, g, u):
    tau = rows_threshold(v)
    p = np.maximum(0.0, np.abs(v) - tau[:, None]) * np.sign(v + PROJ_EPS)
    gc = _g_col(v, g)
    q = gc * u
    active = np.abs(v) > tau[:, None]
    k = np.maximum(np.sum(active, axis=1), 1)
    s_eps = np.sign(v + PROJ_EPS)
    s = np.sign(v)
    t = np.sum(np.where(active, q * s_eps, 0.0), axis=1)
    dv = np.where(active, q * s_eps * s - s * (t / k)[:, None], 0.0)
    return dv, np.sum(p * u, axis=1)


def rows_backward(v: np.ndarray, g: np.ndarray, mode: NormMode, u: np.ndarray):
    """Vector-Jacobian product through the row reparameterization.

    Returns (dV, dg) for upstream dL/dW = u; dg matches the shape of g
    (summed over rows for a shared length).
    """
    if mode.tag == "none":
        return u.copy(), np.zeros_like(g)
    if mode.tag in ("l1wn", "l2wn"):
        dv, dg_rows = _rows_backward_wn(v, g, u, mode.tag)
    elif mode.tag == "l1proj":
        dv, dg_rows = _rows_backward_proj(v, g, u)
    else:
        a = mode.alpha
        dv1, dg1 = _rows_backward_wn(v, g, (1.0 - a) * u, "l1wn")
        dv2, dg2 = _rows_backward_proj(v, g, a * u)
        dv, dg_rows = dv1 + dv2, dg1 + dg2
    return dv, _reduce_g(dg_rows, g)


# --- paired kernels for CReLU residual weights --------------------------------
#
# Both raw matrices share a normalizer built from the rows of
# max(|V+|, |V-|); ties in the max route gradient to the plus matrix.


def _pair_max_and_masks(vp, vm):
    ap, am = np.abs(vp), np.abs(vm)
    plus_wins = ap >= am
    return np.maximum(ap, am), plus_wins


def pair_effective(vp: np.ndarray, vm: np.ndarray, g: np.ndarray, mode: NormMode):
    """Effective (W+, W-) for a shared-normalizer pair."""
    if mode.tag == "none":
        return vp.copy(), vm.copy()
    gc = _g_col(vp, g)
    if mode.tag in ("l1wn", "l2wn"):
        tilde, _ = _pair_max_and_masks(vp, vm)
        n = _row_norms(tilde, mode.tag)
        if np.any(n == 0.0):
            raise DegenerateInputError("zero direction row pair under weight normalization")
        return gc * vp / n[:, None], gc * vm / n[:, None]
    if mode.tag == "l1proj":
        tilde, _ = _pair_max_and_masks(vp, vm)
        tau = rows_threshold(tilde)[:, None]
        pp = np.maximum(0.0, np.abs(vp) - tau) * np.sign(vp + PROJ_EPS)
        pm = np.maximum(0.0, np.abs(vm) - tau) * np.sign(vm + PROJ_EPS)
        return gc * pp, gc * pm
    a = mode.alpha
    wp1, wm1 = pair_effective(vp, vm, g, L1WN)
    wp2, wm2 = pair_effective(vp, vm, g, L1PROJ)
    return (1.0 - a) * wp1 + a * wp2, (1.0 - a) * wm1 + a * wm2


def _pair_backward_wn(vp, vm, g, up, um, tag):
    tilde, plus_wins = _pair_max_and_masks(vp, vm)
    n = _row_norms(tilde, tag)
    gc = _g_col(vp, g)
    c = np.sum(vp * up, axis=1) + np.sum(vm * um, axis=1)
    if tag == "l1wn":
        mp = np.where(plus_wins, np.sign(vp), 0.0)
        mm = np.where(~plus_wins, np.sign(vm), 0.0)
    else:
        scale = tilde / n[:, None]
        mp = np.where(plus_wins, np.sign(vp), 0.0) * scale
        mm = np.where(~plus_wins, np.sign(vm), 0.0) * scale
    coef = (c / n)[:, None]
    dvp = gc / n[:, None] * (up - coef * mp)
    dvm = gc / n[:, None] * (um - coef * mm)
    return dvp, dvm, c / n


def _pair_backward_proj(vp, vm, g, up, um):
    tilde, plus_wins = _pair_max_and_masks(vp, vm)
    tau = rows_threshold(tilde)
    gc = _g_col(vp, g)
    sp_eps, sm_eps = np.sign(vp + PROJ_EPS), np.sign(vm + PROJ_EPS)
    pp = np.maximum(0.0, np.abs(vp) - tau[:, None]) * sp_eps
    pm = np.maximum(0.0, np.abs(vm) - tau[:, None]) * sm_eps
    qp, qm = gc * up, gc * um
    act_p = np.abs(vp) > tau[:, None]
    act_m = np.abs(vm) > tau[:, None]
    act_tilde = tilde > tau[:, None]
    k = np.maximum(np.sum(act_tilde, axis=1), 1)
    # total sensitivity of the projected mass to the shared threshold
    t = np.sum(np.where(act_p, qp * sp_eps, 0.0), axis=1) + np.sum(
        np.where(act_m, qm * sm_eps, 0.0), axis=1
    )
    mu_p = np.where(act_tilde & plus_wins, np.sign(vp), 0.0)
    mu_m = np.where(act_tilde & ~plus_wins, np.sign(vm), 0.0)
    coef = (t / k)[:, None]
    dvp = np.where(act_p, qp * sp_eps * np.sign(vp), 0.0) - mu_p * coef
    dvm = np.where(act_m, qm * sm_eps * np.sign(vm), 0.0) - mu_m * coef
    dg_rows = np.sum(pp * up, axis=1) + np.sum(pm * um, axis=1)
    return dvp, dvm, dg_rows


def pair_backward(vp, vm, g, mode: NormMode, up, um):
    """Vector-Jacobian product through the paired reparameterization."""
    if mode.tag == "none":
        return up.copy(), um.copy(), np.zeros_like(g)
    if mode.tag in ("l1wn", "l2wn"):
        dvp, dvm, dg_rows = _pair_backward_wn(vp, vm, g, up, um, mode.tag)
    elif mode.tag == "l1proj":
        dvp, dvm, dg_rows = _pair_backward_proj(vp, vm, g, up, um)
    else:
        a = mode.alpha
        p1 = _pair_backward_wn(vp, vm, g, (1.0 - a) * up, (1.0 - a) * um, "l1wn")
        p2 = _pair_backward_proj(vp, vm, g, a * up, a * um)
        dvp, dvm, dg_rows = p1[0] + p2[0], p1[1] + p2[1], p1[2] + p2[2]
    return dvp, dvm, _reduce_g(dg_rows, g)
