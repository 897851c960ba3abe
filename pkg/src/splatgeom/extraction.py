"""Point extraction from splat clouds and Chamfer-distance evaluation."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import ply
from .errors import AllZeroOpacity, EmptyCloud, SingularCovariance, SplatGeomError


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray             # (N, 3)
    source_index: np.ndarray = None
    colors: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise SplatGeomError("point cloud contains non-finite coordinates")
        if self.source_index is not None and len(self.source_index) != len(pts):
            raise SplatGeomError("source_index length does not match point count")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def subset(self, keep):
        return PointCloud(self.points[keep],
                          None if self.source_index is None else self.source_index[keep],
                          None if self.colors is None else self.colors[keep])


@dataclass(frozen=True)
class Aabb:
    min: tuple
    max: tuple

    def __post_init__(self):
        if np.any(np.asarray(self.min) > np.asarray(self.max)):
            raise SplatGeomError(f"box min {self.min} exceeds max {self.max}")

    @classmethod
    def parse(cls, text):
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 6:
            raise SplatGeomError(f"crop box needs 6 comma-separated numbers, got {text!r}")
        return cls(tuple(vals[:3]), tuple(vals[3:]))


def _cholesky(covs):
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        for i, c in enumerate(covs):
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise SingularCovariance(f"covariance of splat {i} is not positive definite",
                                         splat=i) from None
        raise


def density(cloud, x):
    """Opacity-weighted, unnormalized Gaussian mixture value at x (shape (3,) or (M, 3))."""
    if cloud.count == 0:
        raise EmptyCloud("density of an empty cloud")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    L = _cholesky(cloud.covariances)
    d = pts[:, None, :] - cloud.means[None, :, :]          # (M, N, 3)
    y = np.linalg.solve(L[None], d[..., None])[..., 0]      # L y = d
    q = (y * y).sum(axis=-1)
    phi = (cloud.opacities[None, :] * np.exp(-0.5 * q)).sum(axis=1)
    return float(phi[0]) if single else phi


def opacity_multinomial(cloud, weighting="alpha"):
    """Stage-1 categorical probabilities. weighting="alpha-volume" also multiplies by |Sigma|^1/2."""
    w = np.asarray(cloud.opacities, dtype=np.float64)
    if weighting == "alpha-volume":
        w = w * np.prod(cloud.scales, axis=1)
    elif weighting != "alpha":
        raise SplatGeomError(f"unknown weighting {weighting!r}")
    total = w.sum()
    if not total > 0:
        raise AllZeroOpacity("all splat opacities are zero")
    return w / total


class AliasTable:
    """Walker/Vose alias table for O(1) categorical draws."""

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        k = len(p)
        scaled = p * k / p.sum()
        self.prob = np.ones(k)
        self.alias = np.arange(k)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            self.prob[i] = 1.0

    def draw(self, rng, n):
        col = rng.integers(0, len(self.prob), size=n)
        coin = rng.random(n)
        return np.where(coin < self.prob[col], col, self.alias[col])


def _stream(seed, k):
    # counter-based: the k-th stream is the seed's Philox sequence jumped k times
    return np.random.Generator(np.random.Philox(key=int(seed)).jumped(k))


def sample_points(cloud, n, seed, weighting="alpha"):
    """Two-stage sampling: splat counts from the opacity multinomial, then Gaussian draws.

    Points are grouped by source splat in index order.
    """
    if n < 0:
        raise SplatGeomError("n must be non-negative")
    probs = opacity_multinomial(cloud, weighting)
    if n == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    picks = AliasTable(probs).draw(_stream(seed, 0), n)
    counts = np.bincount(picks, minlength=cloud.count)
    src = np.repeat(np.arange(cloud.count), counts)
    L = _cholesky(cloud.covariances)
    z = _stream(seed, 1).standard_normal((n, 3))
    pts = cloud.means[src] + np.einsum("nij,nj->ni", L[src], z)
    return PointCloud(pts, src)


def mean_extraction(cloud, min_alpha=0.0, live_mask=None):
    """One point per live splat at its mean, keeping opacity >= min_alpha."""
    if not 0 <= min_alpha <= 1:
        raise SplatGeomError("min_alpha must lie in [0, 1]")
    keep = cloud.opacities >= min_alpha
    if live_mask is not None:
        keep &= np.asarray(live_mask, dtype=bool)
    idx = np.flatnonzero(keep)
    return PointCloud(cloud.means[idx], idx)


def crop(pc, box):
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    keep = np.all((pc.points >= lo) & (pc.points <= hi), axis=1)
    return pc.subset(keep)


def nearest_distances(src, dst, workers=1):
    """Distance from every src point to its nearest dst point (exact KD-tree query)."""
    d, _ = cKDTree(dst).query(src, k=1, workers=workers)
    return d


def chamfer(a, b, squared=False, workers=1):
    """(mean, population variance) of the pooled a->b and b->a nearest-neighbour distances."""
    pa = getattr(a, "points", a)
    pb = getattr(b, "points", b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    d = np.concatenate([nearest_distances(pa, pb, workers), nearest_distances(pb, pa, workers)])
    if squared:
        d = d * d
    return float(d.mean()), float(d.var())


def read_points(path):
    """Points from a binary PLY or a whitespace-separated .xyz/.txt file."""
    if str(path).lower().endswith((".xyz", ".txt", ".pts")):
        return PointCloud(np.loadtxt(path, ndmin=2)[:, :3])
    with open(path, "rb") as fh:
        return PointCloud(ply.read_points(fh.read()))


def write_points(pc, path):
    with open(path, "wb") as fh:
        fh.write(ply.write_points(pc.points))


def report(results):
    """JSON rows plus an aligned text table (scene x method x Mean/Var), best mean starred."""
    methods = []
    for per in results.values():
        for m in per:
            if m not in methods:
                methods.append(m)
    rows = []
    for scene, per in results.items():
        best = min((v[0] for v in per.values()), default=None)
        row = {"scene": scene, "best": None, "methods": {}}
        for m in methods:
            if m in per:
                mean, var = per[m]
                row["methods"][m] = {"mean": mean, "var": var}
                if row["best"] is None and mean == best:
                    row["best"] = m
        rows.append(row)
    if not rows:
        return {"methods": [], "rows": []}, ""

    def cell(row, m):
        v = row["methods"].get(m)
        if v is None:
            return "-", "-"
        star = "*" if row["best"] == m else ""
        return f"{v['mean']:.3f}{star}", f"{v['var']:.3f}"

    header = ["Scene"] + [f"{m} {c}" for m in methods for c in ("Mean", "Var")]
    body = [[r["scene"]] + [x for m in methods for x in cell(r, m)] for r in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    text = "\n".join("  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip()
                     for line in [header] + body)
    return {"methods": methods, "rows": rows}, text


def report_json(results):
    return json.dumps(report(results)[0], indent=1)
