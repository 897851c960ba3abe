"""Semantic masks, per-group edge statistics, shape targets and splat label assignment."""

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .cameras import project_points
from .canny import canny
from .errors import (BadConstants, DimensionMismatch, LabelOutOfRange, PairingMismatch,
                     UnreadableImage)

DEFAULT_K1 = 3.0
DEFAULT_K2 = 1.0
DEFAULT_A_MAX = 50.0


@dataclass(frozen=True, eq=False)
class SemanticMask:
    labels: np.ndarray  # (H, W) int, 0 = no caption

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass(frozen=True, eq=False)
class EdgeMap:
    edges: np.ndarray  # (H, W) bool

    @property
    def count(self):
        return int(self.edges.sum())


def load_mask(path, label_count=256):
    """Read an 8- or 16-bit single-channel PNG label image."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16", "I;16B", "I;16L"):
                raise UnreadableImage(f"{path}: expected single-channel PNG, got mode {img.mode}")
            labels = np.asarray(img).astype(np.int64)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    bad = (labels < 0) | (labels >= label_count)
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        raise LabelOutOfRange(
            f"{path}: label {labels[r, c]} at pixel (row={r}, col={c}) "
            f"outside [0, {label_count})", pixel=(r, c))
    return SemanticMask(labels)


def save_mask(mask, path):
    labels = mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)
    dtype = np.uint8 if labels.max(initial=0) < 256 else np.uint16
    Image.fromarray(labels.astype(dtype)).save(path)


def load_gray(path):
    """Grayscale float image in [0, 1] from any PIL-readable file."""
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                return np.asarray(img).astype(np.float64) / 65535.0
            return np.asarray(img.convert("L")).astype(np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def canny_edges(image, sigma=1.0, low=0.1, high=0.3):
    return EdgeMap(canny(image, sigma, low, high))


def group_edge_counts(edges, mask):
    """Edge pixels per mask label (label 0 included)."""
    e = edges.edges if isinstance(edges, EdgeMap) else np.asarray(edges, dtype=bool)
    labels = mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)
    if e.shape != labels.shape:
        raise DimensionMismatch(f"edge map {e.shape} vs mask {labels.shape}")
    counts = np.bincount(labels[e].ravel())
    return {int(k): int(v) for k, v in enumerate(counts) if v}


def label_pixel_counts(mask):
    labels = mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)
    counts = np.bincount(labels.ravel())
    return {int(k): int(v) for k, v in enumerate(counts) if v}


def target_shape(p, k1=DEFAULT_K1, k2=DEFAULT_K2, a_max=DEFAULT_A_MAX):
    """Clamped (target_a1, target_a2) for a group of unit perplexity p.

    The larger raw target 1/(k2 p) is paired with a1 and the smaller 1/(k1 p)
    with a2; an edge-free group (p = 0) gets the disk-like (a_max, a_max).
    """
    if not k1 > k2 > 0:
        raise BadConstants(f"need k1 > k2 > 0, got k1={k1}, k2={k2}")
    if not a_max > 1:
        raise BadConstants(f"a_max must exceed 1, got {a_max}")
    if p <= 0:
        return float(a_max), float(a_max)
    t_large = 1.0 / (k2 * p)
    t_small = 1.0 / (k1 * p)
    return float(np.clip(t_large, 1.0, a_max)), float(np.clip(t_small, 1.0, a_max))


def expected_splat_count(total_edges, kappa):
    if kappa <= 0:
        raise BadConstants(f"kappa must be positive, got {kappa}")
    if total_edges <= 0:
        return 0
    return max(1, int(round(kappa * total_edges)))


@dataclass
class GroupComplexity:
    label: int
    per_image_edges: dict = field(default_factory=dict)
    total_edges: int = 0
    pixel_count: int = 0
    unit_perplexity: float = 0.0
    target_a1: float = 1.0
    target_a2: float = 1.0
    expected_count: int = 0
    caption: str = None

    @property
    def empty(self):
        return self.pixel_count == 0

    def to_json(self):
        return {
            "label": self.label, "caption": self.caption, "P": self.total_edges,
            "pixel_count": self.pixel_count, "p": self.unit_perplexity,
            "target_a1": self.target_a1, "target_a2": self.target_a2,
            "expected_count": self.expected_count,
            "per_image_edges": {str(k): v for k, v in self.per_image_edges.items()},
        }

    @classmethod
    def from_json(cls, d):
        return cls(label=int(d["label"]), per_image_edges=dict(d.get("per_image_edges", {})),
                   total_edges=int(d["P"]), pixel_count=int(d["pixel_count"]),
                   unit_perplexity=float(d["p"]), target_a1=float(d["target_a1"]),
                   target_a2=float(d["target_a2"]), expected_count=int(d["expected_count"]),
                   caption=d.get("caption"))


def aggregate_perplexity(per_image, labels=None, image_ids=None, k1=DEFAULT_K1, k2=DEFAULT_K2,
                         a_max=DEFAULT_A_MAX, kappa=1.0, captions=None):
    """Fold per-image (edge counts, pixel counts) into one GroupComplexity per label.

    Label 0 (no caption) never forms a group. `labels` adds groups that may be
    absent from every image; those come out empty with P = p = 0.
    """
    per_image = list(per_image)
    if image_ids is None:
        image_ids = list(range(len(per_image)))
    wanted = set(labels or ())
    for edges, pixels in per_image:
        wanted.update(edges)
        wanted.update(pixels)
    wanted.discard(0)

    groups = []
    for label in sorted(wanted):
        per = {}
        npix = 0
        for img_id, (edges, pixels) in zip(image_ids, per_image):
            e = int(edges.get(label, 0))
            if e or label in pixels:
                per[img_id] = e
            npix += int(pixels.get(label, 0))
        total = sum(per.values())
        p = total / npix if npix else 0.0
        t1, t2 = target_shape(p, k1, k2, a_max)
        groups.append(GroupComplexity(
            label=label, per_image_edges=per, total_edges=total, pixel_count=npix,
            unit_perplexity=p, target_a1=t1, target_a2=t2,
            expected_count=expected_splat_count(total, kappa),
            caption=(captions or {}).get(label)))
    return groups


def complexity_report(groups, k1, k2, a_max, kappa, canny_params=None):
    return {
        "k1": k1, "k2": k2, "a_max": a_max, "kappa": kappa,
        "canny": canny_params or {},
        "groups": [g.to_json() for g in groups],
    }


def load_report(path):
    with open(path) as fh:
        data = json.load(fh)
    return [GroupComplexity.from_json(g) for g in data["groups"]]


def targets_from_groups(groups):
    return {g.label: (g.target_a1, g.target_a2) for g in groups}


@dataclass
class LabelAssignment:
    per_splat_label: np.ndarray
    vote_histograms: np.ndarray = None  # (N, max_label + 1) vote counts

    def __len__(self):
        return len(self.per_splat_label)


def _views(cameras, masks):
    if len(cameras) != len(masks):
        raise PairingMismatch(f"{len(cameras)} cameras but {len(masks)} masks")
    for cam, mask in zip(cameras, masks):
        labels = mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)
        if labels.shape != (cam.height, cam.width):
            raise DimensionMismatch(
                f"mask {labels.shape} does not match camera {(cam.height, cam.width)}")
        yield cam, labels


def _lookup(cam, labels, means):
    """Mask label under each projected mean, or -1 if behind or off-image."""
    pix, _, front = project_points(cam, means)
    col = np.floor(pix[:, 0])
    row = np.floor(pix[:, 1])
    ok = front & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    out = np.full(len(means), -1, dtype=np.int64)
    out[ok] = labels[row[ok].astype(int), col[ok].astype(int)]
    return out


def assign_labels(means, cameras, masks, policy="majority", view=0, keep_votes=False):
    """Label each splat from the masks under its projected mean.

    policy "per-view" reads one view (index `view`); "majority" takes the mode
    over all views where the mean lands in-image, ties going to the lower label.
    Splats never seen get 0.
    """
    means = np.asarray(getattr(means, "means", getattr(means, "positions", means)), dtype=np.float64)
    views = list(_views(cameras, masks))
    n = len(means)
    if policy == "per-view":
        if not views:
            return LabelAssignment(np.zeros(n, dtype=np.int64))
        cam, labels = views[view]
        found = _lookup(cam, labels, means)
        return LabelAssignment(np.where(found < 0, 0, found))
    if policy != "majority":
        raise ValueError(f"unknown policy {policy!r}")

    n_labels = 1 + max((int(lbl.max(initial=0)) for _, lbl in views), default=0)
    votes = np.zeros((n, n_labels), dtype=np.int64)
    rows = np.arange(n)
    for cam, labels in views:
        found = _lookup(cam, labels, means)
        seen = found >= 0
        np.add.at(votes, (rows[seen], found[seen]), 1)
    # argmax returns the first maximum, i.e. the lower label id; unseen rows give 0
    per_splat = votes.argmax(axis=1).astype(np.int64)
    return LabelAssignment(per_splat, votes if keep_votes else None)
