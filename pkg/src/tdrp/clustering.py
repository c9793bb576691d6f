"""Lloyd's k-means with k-means++ seeding.

Ties are always broken towards the lowest index so results depend only on
``(points, k, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KmeansResult:
    centers: np.ndarray       # (k, d)
    assignments: np.ndarray   # (n,)
    inertia: float
    iterations: int
    k: int                    # after clamping to the number of points
    inertia_history: list[float]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=-1)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with a center
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest / total), rng.random(), side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
        closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(points, k: int, seed: int | np.random.Generator = 0, max_iter: int = 100,
           tol: float = 1e-8, n_init: int = 30) -> KmeansResult:
    """Best of ``n_init`` seeded Lloyd runs (lowest inertia, earliest run on ties)."""
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(points, k, rng, max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(points, k: int, rng: np.random.Generator, max_iter: int, tol: float) -> KmeansResult:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("kmeans needs at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(pts))

    centers = _kmeanspp(pts, k, rng)
    d2 = _sq_dists(pts, centers)
    assign = np.argmin(d2, axis=1)
    history = [float(d2[np.arange(len(pts)), assign].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new = centers.copy()
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        # re-seed empty clusters at the point farthest from its own center
        own = d2[np.arange(len(pts)), assign]
        for j in range(k):
            if not np.any(assign == j):
                far = int(np.argmax(own))
                new[j] = pts[far]
                own[far] = -1.0
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        d2 = _sq_dists(pts, centers)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(pts)), assign].sum()))
        if shift < tol:
            break
    centers, assign = _hartigan_refine(pts, centers, assign)
    d2 = _sq_dists(pts, centers)
    inertia = float(d2[np.arange(len(pts)), assign].sum())
    if inertia < history[-1]:
        history.append(inertia)
    return KmeansResult(centers, assign, inertia, it, k, history)


def _hartigan_refine(pts: np.ndarray, centers: np.ndarray, assign: np.ndarray,
                     max_sweeps: int = 100):
    """Single-point transfers that lower inertia once the cluster means are updated.

    Lloyd's fixed points can still admit such moves; after this pass none remain.
    """
    k = len(centers)
    assign = assign.copy()
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    centers = centers.copy()
    for _ in range(max_sweeps):
        moved = False
        for i, x in enumerate(pts):
            a = assign[i]
            if counts[a] <= 1:
                continue
            d2 = np.sum((centers - x) ** 2, axis=1)
            remove_gain = counts[a] / (counts[a] - 1.0) * d2[a]
            add_cost = counts / (counts + 1.0) * d2
            add_cost[a] = np.inf
            b = int(np.argmin(add_cost))
            if add_cost[b] < remove_gain * (1.0 - 1e-12):
                centers[a] = (centers[a] * counts[a] - x) / (counts[a] - 1.0)
                centers[b] = (centers[b] * counts[b] + x) / (counts[b] + 1.0)
                counts[a] -= 1.0
                counts[b] += 1.0
                assign[i] = b
                moved = True
        if not moved:
            break
    # recompute means exactly to drop incremental round-off
    for j in range(k):
        if counts[j] > 0:
            centers[j] = pts[assign == j].mean(axis=0)
    return centers, assign
