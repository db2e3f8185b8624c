"""Template matching by exhaustive rigid-alignment search.

Every ordered reference pair (one minutia from each template) hypothesizes
the rotation+translation that maps the second template's reference onto the
first, aligning both position and direction. The transform is applied to the
whole second template and transformed minutiae are greedily paired to the
nearest unpaired counterparts within the distance and angle tolerances
(nearest first, ties broken by lower index). The final pair count is the
maximum over all hypotheses, evaluated with the templates in both roles, so
the score is symmetric by construction. Score = 2*m / (n1 + n2), which is 1.0
exactly for a self match and 0 for fully disjoint templates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadThresholdError
from .minutiae import TERMINATION, TWO_PI, Template


@dataclass(frozen=True)
class MatchParams:
    """Pairing tolerances: distance in pixels, angle in radians."""

    distance_tolerance: float = 10.0
    angle_tolerance: float = math.pi / 6
    kind_strict: bool = True

    def __post_init__(self):
        if not self.distance_tolerance > 0:
            raise ValueError("distance_tolerance must be positive")
        if not 0 < self.angle_tolerance <= math.pi:
            raise ValueError("angle_tolerance must be in (0, pi]")


@dataclass(frozen=True)
class MatchResult:
    score: float
    matched_pairs: int
    n1: int
    n2: int
    transform: tuple[float, float, float]  # (dx, dy, rotation) mapping b onto a


DEFAULT_PARAMS = MatchParams()

_IDENTITY = (0.0, 0.0, 0.0)


def match_templates(a: Template, b: Template,
                    params: MatchParams = DEFAULT_PARAMS) -> MatchResult:
    """Best alignment score between two templates; symmetric in its arguments."""
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        return MatchResult(0.0, 0, n1, n2, _IDENTITY)
    fa = _as_arrays(a)
    fb = _as_arrays(b)
    m_fwd, t_fwd = _best_alignment(fa, fb, params)
    m_rev, t_rev = _best_alignment(fb, fa, params)
    if m_rev > m_fwd:
        m, transform = m_rev, _invert(t_rev)
    else:
        m, transform = m_fwd, t_fwd
    return MatchResult(score=2.0 * m / (n1 + n2), matched_pairs=m,
                       n1=n1, n2=n2, transform=transform)


def decide(result: MatchResult, threshold: float) -> bool:
    """Accept (True) when the score reaches the threshold; boundary inclusive."""
    if not 0 < threshold < 1:
        raise BadThresholdError(f"threshold must be in (0, 1): {threshold}")
    return result.score >= threshold


# -- internals ------------------------------------------------------------------

def _as_arrays(t: Template):
    x = np.array([m.x for m in t.minutiae], dtype=np.float64)
    y = np.array([m.y for m in t.minutiae], dtype=np.float64)
    theta = np.array([m.theta for m in t.minutiae], dtype=np.float64)
    kind = np.array([0 if m.kind == TERMINATION else 1 for m in t.minutiae],
                    dtype=np.int8)
    return x, y, theta, kind


def _best_alignment(a, b, params: MatchParams) -> tuple[int, tuple[float, float, float]]:
    ax, ay, atheta, akind = a
    bx, by, btheta, bkind = b
    n1, n2 = ax.size, bx.size

    kind_ok = akind[:, None] == bkind[None, :]  # (n1, n2)
    if params.kind_strict:
        ref_a, ref_b = np.nonzero(kind_ok)
    else:
        ref_a, ref_b = np.nonzero(np.ones((n1, n2), dtype=bool))
    if ref_a.size == 0:
        return 0, _IDENTITY

    phi = atheta[ref_a] - btheta[ref_b]
    cos, sin = np.cos(phi), np.sin(phi)
    tx = ax[ref_a] - (cos * bx[ref_b] - sin * by[ref_b])
    ty = ay[ref_a] - (sin * bx[ref_b] + cos * by[ref_b])

    # Transformed b under every hypothesis: (H, n2)
    tbx = cos[:, None] * bx[None, :] - sin[:, None] * by[None, :] + tx[:, None]
    tby = sin[:, None] * bx[None, :] + cos[:, None] * by[None, :] + ty[:, None]
    tbtheta = np.mod(btheta[None, :] + phi[:, None], TWO_PI)

    dist2 = ((ax[None, :, None] - tbx[:, None, :]) ** 2
             + (ay[None, :, None] - tby[:, None, :]) ** 2)  # (H, n1, n2)
    dtheta = np.abs(atheta[None, :, None] - tbtheta[:, None, :])
    dtheta = np.minimum(dtheta, TWO_PI - dtheta)

    candidates = (dist2 <= params.distance_tolerance ** 2) & (dtheta <= params.angle_tolerance)
    if params.kind_strict:
        candidates &= kind_ok[None, :, :]

    # Cheap upper bound per hypothesis prunes the greedy pass to the few
    # alignments that could still beat the current best.
    bound = np.minimum(candidates.any(axis=2).sum(axis=1),
                       candidates.any(axis=1).sum(axis=1))
    order = np.argsort(-bound, kind="stable")

    best_m = 0
    best_h = -1
    cap = min(n1, n2)
    for h in order:
        if bound[h] <= best_m:
            break
        m = _greedy_pairs(candidates[h], dist2[h])
        if m > best_m:
            best_m, best_h = m, int(h)
            if best_m == cap:
                break
    if best_h < 0:
        return 0, _IDENTITY
    return best_m, (float(tx[best_h]), float(ty[best_h]), float(phi[best_h] % TWO_PI))


def _greedy_pairs(mask: np.ndarray, dist2: np.ndarray) -> int:
    pairs = np.argwhere(mask)
    if pairs.size == 0:
        return 0
    ia, ib = pairs[:, 0], pairs[:, 1]
    # nearest first; ties go to the lower a index, then the lower b index
    order = np.lexsort((ib, ia, dist2[ia, ib]))
    used_a = np.zeros(mask.shape[0], dtype=bool)
    used_b = np.zeros(mask.shape[1], dtype=bool)
    m = 0
    for k in order:
        i, j = ia[k], ib[k]
        if not used_a[i] and not used_b[j]:
            used_a[i] = used_b[j] = True
            m += 1
    return m


def _invert(t: tuple[float, float, float]) -> tuple[float, float, float]:
    dx, dy, rot = t
    cos, sin = math.cos(rot), math.sin(rot)
    # inverse of p -> R p + t is p -> R^T (p - t)
    return (-(cos * dx + sin * dy), -(-sin * dx + cos * dy), (-rot) % TWO_PI)
