"""Gaussian splat records, 3DGS PLY I/O and the storage-to-activated transforms.

Clouds are held column-wise (one float32 array per PLY property group) so that
parse/write round-trips are bit exact and all per-splat maths vectorizes.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import ply
from .errors import DegenerateRotation, MalformedHeader, NonFiniteValue

N_SH_REST = 45

_POS = ["x", "y", "z"]
_NRM = ["nx", "ny", "nz"]
_DC = [f"f_dc_{i}" for i in range(3)]
_REST = [f"f_rest_{i}" for i in range(N_SH_REST)]
_OPA = ["opacity"]
_SCL = [f"scale_{i}" for i in range(3)]
_ROT = [f"rot_{i}" for i in range(4)]


def property_names(with_sh_rest=True):
    """Vertex property order written by the reference 3DGS exporter."""
    return _POS + _NRM + _DC + (_REST if with_sh_rest else []) + _OPA + _SCL + _ROT


def record_size(with_sh_rest=True):
    return 4 * len(property_names(with_sh_rest))


@dataclass(frozen=True)
class SplatRaw:
    position: np.ndarray
    log_scales: np.ndarray
    rotation: np.ndarray  # (w, x, y, z), not normalized
    opacity_logit: float
    sh_dc: np.ndarray
    sh_rest: np.ndarray = None
    normal: np.ndarray = None


@dataclass(frozen=True, eq=False)
class SplatCloud:
    positions: np.ndarray       # (N, 3) float32
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4) wxyz
    opacity_logits: np.ndarray  # (N,)
    sh_dc: np.ndarray           # (N, 3)
    sh_rest: np.ndarray = None  # (N, 45) or None
    normals: np.ndarray = None  # (N, 3); zeros when absent

    def __post_init__(self):
        n = len(self.positions)
        cols = {
            "positions": (3,), "log_scales": (3,), "rotations": (4,),
            "opacity_logits": (), "sh_dc": (3,), "normals": (3,),
        }
        for name, tail in cols.items():
            val = getattr(self, name)
            if val is None:
                val = np.zeros((n,) + tail, np.float32)
            val = np.ascontiguousarray(val, dtype=np.float32).reshape((n,) + tail)
            object.__setattr__(self, name, val)
        if self.sh_rest is not None:
            object.__setattr__(self, "sh_rest", np.ascontiguousarray(
                self.sh_rest, dtype=np.float32).reshape(n, N_SH_REST))

    @property
    def count(self):
        return len(self.positions)

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        return SplatRaw(
            position=self.positions[i], log_scales=self.log_scales[i],
            rotation=self.rotations[i], opacity_logit=float(self.opacity_logits[i]),
            sh_dc=self.sh_dc[i],
            sh_rest=None if self.sh_rest is None else self.sh_rest[i],
            normal=self.normals[i])

    @property
    def splats(self):
        return [self[i] for i in range(self.count)]

    def __eq__(self, other):
        if not isinstance(other, SplatCloud):
            return NotImplemented
        if (self.sh_rest is None) != (other.sh_rest is None):
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self._columns(), other._columns()))

    def _columns(self):
        cols = [self.positions, self.normals, self.sh_dc]
        if self.sh_rest is not None:
            cols.append(self.sh_rest)
        return cols + [self.opacity_logits, self.log_scales, self.rotations]

    def subset(self, keep):
        """New cloud with the rows selected by a boolean mask or index array."""
        return SplatCloud(
            positions=self.positions[keep], log_scales=self.log_scales[keep],
            rotations=self.rotations[keep], opacity_logits=self.opacity_logits[keep],
            sh_dc=self.sh_dc[keep],
            sh_rest=None if self.sh_rest is None else self.sh_rest[keep],
            normals=self.normals[keep])

    def replace(self, **changes):
        fields = dict(
            positions=self.positions, log_scales=self.log_scales, rotations=self.rotations,
            opacity_logits=self.opacity_logits, sh_dc=self.sh_dc, sh_rest=self.sh_rest,
            normals=self.normals)
        fields.update(changes)
        return SplatCloud(**fields)

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            return cls.empty()
        has_rest = records[0].sh_rest is not None
        return cls(
            positions=[r.position for r in records],
            log_scales=[r.log_scales for r in records],
            rotations=[r.rotation for r in records],
            opacity_logits=[r.opacity_logit for r in records],
            sh_dc=[r.sh_dc for r in records],
            sh_rest=[r.sh_rest for r in records] if has_rest else None,
            normals=[r.normal if r.normal is not None else np.zeros(3) for r in records])

    @classmethod
    def empty(cls, with_sh_rest=False):
        z = np.zeros
        return cls(z((0, 3)), z((0, 3)), z((0, 4)), z(0), z((0, 3)),
                   z((0, N_SH_REST)) if with_sh_rest else None)


def _check_finite(cloud):
    bad = np.zeros(cloud.count, dtype=bool)
    for col in cloud._columns():
        bad |= ~np.isfinite(col.reshape(cloud.count, -1 if cloud.count else 1)).all(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteValue(f"non-finite value in splat {idx}", index=idx)


def parse_splat_ply(data):
    """Parse a 3DGS binary PLY into a SplatCloud.

    Raises MalformedHeader, TruncatedBody, or NonFiniteValue (with the index of
    the first offending splat). Unknown vertex properties are skipped with a warning.
    """
    v = ply.read_vertices(bytes(data))
    names = v.dtype.names or ()
    required = _POS + _DC + _OPA + _SCL + _ROT
    missing = [n for n in required if n not in names]
    if missing:
        raise MalformedHeader(f"missing required vertex properties: {', '.join(missing)}")
    has_rest = _REST[0] in names
    if has_rest and any(n not in names for n in _REST):
        raise MalformedHeader("partial f_rest_* block; expected all 45 coefficients")
    has_nrm = all(n in names for n in _NRM)
    ply.warn_extra(names, set(property_names(True)))

    def cols(keys):
        return np.stack([v[k].astype(np.float32) for k in keys], axis=1)

    n = len(v)
    cloud = SplatCloud(
        positions=cols(_POS), log_scales=cols(_SCL), rotations=cols(_ROT),
        opacity_logits=v["opacity"].astype(np.float32), sh_dc=cols(_DC),
        sh_rest=cols(_REST) if has_rest else None,
        normals=cols(_NRM) if has_nrm else np.zeros((n, 3), np.float32))
    _check_finite(cloud)
    return cloud


def write_splat_ply(cloud):
    """Serialize in the canonical 3DGS property order (f_rest_* only if present)."""
    _check_finite(cloud)
    has_rest = cloud.sh_rest is not None
    columns = []
    for block, arr in ((_POS, cloud.positions), (_NRM, cloud.normals), (_DC, cloud.sh_dc)):
        columns += [(k, arr[:, i]) for i, k in enumerate(block)]
    if has_rest:
        columns += [(k, cloud.sh_rest[:, i]) for i, k in enumerate(_REST)]
    columns.append(("opacity", cloud.opacity_logits))
    columns += [(k, cloud.log_scales[:, i]) for i, k in enumerate(_SCL)]
    columns += [(k, cloud.rotations[:, i]) for i, k in enumerate(_ROT)]
    return ply.write_vertices(columns, cloud.count)


def read_splat_ply(path):
    with open(path, "rb") as fh:
        return parse_splat_ply(fh.read())


def save_splat_ply(cloud, path):
    with open(path, "wb") as fh:
        fh.write(write_splat_ply(cloud))


# -- activation -------------------------------------------------------------

def quat_to_rotmat(q):
    """Rotation matrices from normalized (..., 4) wxyz quaternions."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def normalize_quats(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateRotation("quaternion norm below 1e-12")
    return q / norm


def build_covariance(scales, rotmats):
    """R diag(s^2) R^T, symmetrized."""
    M = rotmats * np.asarray(scales)[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass(frozen=True)
class GaussianSplat:
    mean: np.ndarray
    scales: np.ndarray
    rotation: np.ndarray
    opacity: float
    covariance: np.ndarray


@dataclass(frozen=True)
class ActivatedCloud:
    """Column-wise GaussianSplat values for a whole cloud (float64)."""

    means: np.ndarray        # (N, 3)
    scales: np.ndarray       # (N, 3)
    rotations: np.ndarray    # (N, 4) unit wxyz
    opacities: np.ndarray    # (N,)
    covariances: np.ndarray  # (N, 3, 3)

    @property
    def count(self):
        return len(self.means)

    def __getitem__(self, i):
        return GaussianSplat(self.means[i], self.scales[i], self.rotations[i],
                             float(self.opacities[i]), self.covariances[i])

    def subset(self, keep):
        return ActivatedCloud(self.means[keep], self.scales[keep], self.rotations[keep],
                              self.opacities[keep], self.covariances[keep])

    @classmethod
    def concat(cls, a, b):
        return cls(*(np.concatenate([getattr(a, f), getattr(b, f)]) for f in
                     ("means", "scales", "rotations", "opacities", "covariances")))


def activate(raw):
    """Activate one SplatRaw: exp scales, logistic opacity, unit quaternion, covariance."""
    scales = np.exp(np.asarray(raw.log_scales, dtype=np.float64))
    rot = normalize_quats(raw.rotation)
    return GaussianSplat(
        mean=np.asarray(raw.position, dtype=np.float64),
        scales=scales,
        rotation=rot,
        opacity=float(expit(np.float64(raw.opacity_logit))),
        covariance=build_covariance(scales, quat_to_rotmat(rot)))


def activate_cloud(cloud):
    scales = np.exp(cloud.log_scales.astype(np.float64))
    rots = normalize_quats(cloud.rotations)
    return ActivatedCloud(
        means=cloud.positions.astype(np.float64),
        scales=scales,
        rotations=rots,
        opacities=expit(cloud.opacity_logits.astype(np.float64)),
        covariances=build_covariance(scales, quat_to_rotmat(rots)))


def aspect_ratios(splat):
    """(a1, a2) = (s_max / s_min, s_mid / s_min); the smallest scale is the disk normal."""
    s = np.sort(np.asarray(getattr(splat, "scales", splat), dtype=np.float64))
    return float(s[2] / s[0]), float(s[1] / s[0])


def aspect_ratios_many(scales):
    s = np.sort(np.asarray(scales, dtype=np.float64), axis=-1)
    return s[..., 2] / s[..., 0], s[..., 1] / s[..., 0]
