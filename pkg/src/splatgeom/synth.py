"""Seeded synthetic scenes: splat clouds, cameras, rendered masks/images and ground truth."""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.special import logit

from .cameras import CameraModel, look_at, save_cameras_json
from .extraction import PointCloud, write_points
from .semantics import save_mask
from .splat_model import SplatCloud, save_splat_ply
from .spectrum import square_corpus

LABEL_BUILDING = 1
LABEL_ROAD = 2
CAPTIONS = {LABEL_BUILDING: "buildings", LABEL_ROAD: "road"}


def _cloud(means, log_scales, opacities):
    n = len(means)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return SplatCloud(positions=means, log_scales=log_scales, rotations=quats,
                      opacity_logits=logit(np.asarray(opacities, dtype=np.float64)),
                      sh_dc=np.full((n, 3), 0.5))


def _grid(nx, ny, extent_x, extent_y):
    gx = (np.arange(nx) + 0.5) * extent_x / nx
    gy = (np.arange(ny) + 0.5) * extent_y / ny
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    return xx.ravel(), yy.ravel()


@dataclass
class FantasyScene:
    cloud: SplatCloud
    ground_truth: np.ndarray
    is_fantasy: np.ndarray


def fantasy_scene(seed, n_surface=900, n_fantasy=100, alpha_surface=0.9, alpha_fantasy=0.05,
                  offset=5.0, extent=10.0, n_ground_truth=10000):
    """Flat disks tiling the plane z=0 plus faint isotropic distractors hovering `offset` above."""
    rng = np.random.default_rng(seed)
    side = int(round(np.sqrt(n_surface)))
    x, y = _grid(side, n_surface // side, extent, extent)
    spacing = extent / side
    surf = np.stack([x, y, np.zeros_like(x)], axis=1)
    surf[:, :2] += rng.uniform(-0.1, 0.1, (len(surf), 2)) * spacing
    surf_scales = np.log(np.tile([0.5 * spacing, 0.5 * spacing, 0.01], (len(surf), 1)))
    fant = np.column_stack([rng.uniform(0, extent, (n_fantasy, 2)), np.full(n_fantasy, offset)])
    fant_scales = np.log(np.full((n_fantasy, 3), 0.3))
    cloud = _cloud(np.vstack([surf, fant]), np.vstack([surf_scales, fant_scales]),
                   np.r_[np.full(len(surf), alpha_surface), np.full(n_fantasy, alpha_fantasy)])
    gt = np.column_stack([rng.uniform(0, extent, (n_ground_truth, 2)), np.zeros(n_ground_truth)])
    return FantasyScene(cloud, gt, np.r_[np.zeros(len(surf), bool), np.ones(n_fantasy, bool)])


# -- full scene bundle: ground (road) + checkered wall (building) -------------

GROUND = 10.0       # ground square [0, GROUND]^2 at z = 0
WALL_Y = 10.0       # wall plane y = WALL_Y, x in [0, GROUND], z in [0, WALL_H]
WALL_H = 4.0
SKY_GRAY = 0.8
ROAD_GRAY = 0.5


def scene_cameras(width=128, height=96, focal=100.0):
    cams = []
    for i, x in enumerate((2.0, 4.0, 6.0, 8.0)):
        R, t = look_at((x, -6.0, 7.0), (5.0, 6.0, 1.0))
        cams.append(CameraModel(focal, focal, width / 2, height / 2, width, height, R, t,
                                mask_path=f"masks/view_{i:03d}.png"))
    return cams


def render_view(camera):
    """Ray-cast the analytic scene: (labels (H, W) int, gray (H, W) float)."""
    v, u = np.mgrid[0:camera.height, 0:camera.width]
    rays = np.stack([(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy,
                     np.ones(u.shape)], axis=-1) @ camera.rotation  # camera -> world: R^T d
    c = camera.center
    labels = np.zeros(u.shape, dtype=np.int64)
    gray = np.full(u.shape, SKY_GRAY)
    depth = np.full(u.shape, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -c[2] / rays[..., 2]
        pg = c + tg[..., None] * rays
        hit_g = (tg > 0) & (pg[..., 0] >= 0) & (pg[..., 0] <= GROUND) & \
                (pg[..., 1] >= 0) & (pg[..., 1] <= GROUND)
        tw = (WALL_Y - c[1]) / rays[..., 1]
        pw = c + tw[..., None] * rays
        hit_w = (tw > 0) & (pw[..., 0] >= 0) & (pw[..., 0] <= GROUND) & \
                (pw[..., 2] >= 0) & (pw[..., 2] <= WALL_H)

    g = hit_g & (tg < depth)
    labels[g], gray[g], depth[g] = LABEL_ROAD, ROAD_GRAY, tg[g]
    w = hit_w & (tw < depth)
    checker = (np.floor(pw[..., 0]) + np.floor(pw[..., 2])) % 2
    labels[w], gray[w] = LABEL_BUILDING, np.where(checker[w] > 0, 0.85, 0.15)
    return labels, gray


def scene_splats(rng, n_fantasy=60):
    gx, gy = _grid(20, 20, GROUND, GROUND)
    ground = np.stack([gx, gy, np.zeros_like(gx)], axis=1)
    wx, wz = _grid(20, 8, GROUND, WALL_H)
    wall = np.stack([wx, np.full_like(wx, WALL_Y), wz], axis=1)
    fant = np.column_stack([rng.uniform(0, GROUND, (n_fantasy, 2)), np.full(n_fantasy, 5.0)])
    means = np.vstack([ground, wall, fant])
    n_surf = len(ground) + len(wall)
    log_scales = np.log(0.2) + 0.2 * rng.standard_normal((len(means), 3))
    alpha = np.r_[np.clip(0.9 + 0.05 * rng.standard_normal(n_surf), 0.5, 0.99),
                  np.full(n_fantasy, 0.05)]
    return _cloud(means, log_scales, alpha)


def scene_ground_truth(rng, n=20000):
    a_ground, a_wall = GROUND * GROUND, GROUND * WALL_H
    n_g = int(round(n * a_ground / (a_ground + a_wall)))
    g = np.column_stack([rng.uniform(0, GROUND, (n_g, 2)), np.zeros(n_g)])
    w = np.column_stack([rng.uniform(0, GROUND, n - n_g), np.full(n - n_g, WALL_Y),
                         rng.uniform(0, WALL_H, n - n_g)])
    return np.vstack([g, w])


def write_scene_bundle(out_dir, seed):
    """Write splats.ply, cameras.json, masks/, images/, captions.json and ground_truth.ply."""
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    cams = scene_cameras()
    for i, cam in enumerate(cams):
        labels, gray = render_view(cam)
        save_mask(labels, os.path.join(out_dir, cam.mask_path))
        Image.fromarray(np.round(gray * 255).astype(np.uint8)).save(
            os.path.join(out_dir, "images", f"view_{i:03d}.png"))
    save_cameras_json(cams, os.path.join(out_dir, "cameras.json"))
    save_splat_ply(scene_splats(rng), os.path.join(out_dir, "splats.ply"))
    write_points(PointCloud(scene_ground_truth(rng)), os.path.join(out_dir, "ground_truth.ply"))
    with open(os.path.join(out_dir, "captions.json"), "w") as fh:
        json.dump({str(k): v for k, v in CAPTIONS.items()}, fh, indent=1)
    return out_dir


def write_square_corpus(out_dir, count=50, size=256):
    os.makedirs(out_dir, exist_ok=True)
    for i, img in enumerate(square_corpus(count, size)):
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(
            os.path.join(out_dir, f"square_{i:03d}.png"))
    return out_dir
