"""Deterministic synthetic scenes: random splats, a camera ring, and rendered targets."""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import raster
from ..sh import C0, num_coeffs
from ..splat import Camera, SplatSet, logit, quat_to_rotmat
from .cameras import load_cameras, save_cameras
from .images import read_image, write_image
from .ply import PointCloud, load_ply, save_points_ply, save_splats_ply


@dataclass
class SceneSpec:
    count: int = 5000
    distribution: str = "uniform"     # uniform | clustered
    extent: float = 1.0               # centers in [-extent, extent]^3
    scale_range: tuple = (0.03, 0.09)
    opacity_range: tuple = (0.3, 0.95)
    sh_degree: int = 1
    sh_rest_std: float = 0.1
    cluster_fraction: float = 0.9
    n_views: int = 64
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0
    radius: float = 3.5
    elevations: tuple = (0.15, 0.6)
    holdout_every: int = 8
    n_points: int = 20000
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class SceneBundle:
    cameras: list
    images: list
    points: PointCloud
    bounds: np.ndarray
    splats: SplatSet = None
    train_idx: list = field(default_factory=list)
    test_idx: list = field(default_factory=list)
    spec: SceneSpec = None
    image_paths: list = field(default_factory=list)

    @property
    def background(self):
        return tuple(self.spec.background) if self.spec else (0.0, 0.0, 0.0)

    def views(self, idx):
        return [(self.cameras[i], self.images[i]) for i in idx]


def random_splats(count, seed=0, distribution="uniform", extent=1.0, scale_range=(0.03, 0.09),
                  opacity_range=(0.3, 0.95), sh_degree=1, sh_rest_std=0.1, cluster_fraction=0.9):
    """``count`` random splats; ``clustered`` packs most centers into one octant blob."""
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        mu = rng.uniform(-extent, extent, (count, 3))
    elif distribution == "clustered":
        n_c = int(round(cluster_fraction * count))
        blob = rng.normal(0.5 * extent, 0.12 * extent, (n_c, 3))
        rest = rng.uniform(-extent, extent, (count - n_c, 3))
        mu = np.clip(np.concatenate([blob, rest]), -extent, extent)
        mu = mu[rng.permutation(count)]
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    log_scale = np.log(rng.uniform(scale_range[0], scale_range[1], (count, 3)))
    rot = rng.normal(size=(count, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    opac = logit(rng.uniform(opacity_range[0], opacity_range[1], count))
    sh = np.zeros((count, num_coeffs(sh_degree), 3))
    sh[:, 0] = (rng.uniform(0.05, 0.95, (count, 3)) - 0.5) / C0
    if sh_degree > 0:
        sh[:, 1:] = rng.normal(0.0, sh_rest_std, (count, num_coeffs(sh_degree) - 1, 3))
    return SplatSet(np.arange(count, dtype=np.int64), mu, log_scale, rot, opac, sh)


def camera_ring(n, radius, width, height, fov_deg=50.0, elevations=(0.15, 0.6), target=(0, 0, 0)):
    """Cameras on rings around ``target``, alternating between the given elevations."""
    fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    cams = []
    for i in range(n):
        az = 2 * np.pi * i / max(n, 1)
        el = elevations[i % len(elevations)]
        eye = np.asarray(target, float) + radius * np.array(
            [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        cams.append(Camera.look_at(eye, target, [0, 1, 0], width, height, fx, name=f"view_{i:03d}"))
    return cams


def sample_points(splats: SplatSet, n, seed=0):
    """Point cloud drawn from the splats' ellipsoids, colored by their base color."""
    rng = np.random.default_rng(seed)
    if len(splats) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    pick = rng.integers(0, len(splats), n)
    R = quat_to_rotmat(splats.rotation[pick])
    local = rng.normal(0.0, 0.5, (n, 3)) * np.exp(splats.log_scale[pick])
    pts = splats.mu[pick] + np.einsum("nij,nj->ni", R, local)
    cols = np.clip(0.5 + C0 * splats.sh[pick, 0], 0.0, 1.0)
    return PointCloud(pts, cols)


def synth_scene(spec: SceneSpec = None, seed=0):
    """Build a bundle whose targets are rendered by the engine itself (f64, no termination)."""
    spec = spec or SceneSpec()
    splats = random_splats(spec.count, seed, spec.distribution, spec.extent, spec.scale_range,
                           spec.opacity_range, spec.sh_degree, spec.sh_rest_std,
                           spec.cluster_fraction)
    cams = camera_ring(spec.n_views, spec.radius, spec.width, spec.height, spec.fov_deg,
                       spec.elevations)
    images = [raster.render_view(splats, c, spec.background, stop_T=0.0, dtype=np.float64).color
              for c in cams]
    test = [i for i in range(spec.n_views) if spec.holdout_every and i % spec.holdout_every == 0]
    train = [i for i in range(spec.n_views) if i not in test]
    bounds = np.array([[-spec.extent] * 3, [spec.extent] * 3], dtype=np.float64)
    points = sample_points(splats, spec.n_points, seed + 1)
    return SceneBundle(cams, images, points, bounds, splats, train, test, spec)


def write_bundle(bundle: SceneBundle, outdir, image_ext=".png"):
    os.makedirs(os.path.join(outdir, "images"), exist_ok=True)
    paths = []
    for cam, img in zip(bundle.cameras, bundle.images):
        rel = os.path.join("images", cam.name + image_ext)
        write_image(os.path.join(outdir, rel), img)
        paths.append(rel)
    save_cameras(os.path.join(outdir, "cameras.json"), bundle.cameras)
    save_points_ply(os.path.join(outdir, "points.ply"), bundle.points.points, bundle.points.colors)
    if bundle.splats is not None:
        save_splats_ply(os.path.join(outdir, "gt_splats.ply"), bundle.splats)
    meta = {"images": paths, "train": bundle.train_idx, "test": bundle.test_idx,
            "bounds": bundle.bounds.tolist(), "spec": asdict(bundle.spec) if bundle.spec else None}
    with open(os.path.join(outdir, "scene.json"), "w") as f:
        json.dump(meta, f, indent=1)
        f.write("\n")
    bundle.image_paths = paths
    return outdir


def load_bundle(path):
    """Read a bundle directory written by :func:`write_bundle` (or laid out the same way)."""
    with open(os.path.join(path, "scene.json")) as f:
        meta = json.load(f)
    cams = load_cameras(os.path.join(path, "cameras.json"))
    if len(meta["images"]) != len(cams):
        raise ValueError(f"{path}: {len(cams)} cameras but {len(meta['images'])} images")
    images = []
    for cam, rel in zip(cams, meta["images"]):
        full = os.path.join(path, rel)
        if not os.path.exists(full):
            raise FileNotFoundError(f"missing image {full}")
        img = read_image(full)
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"{full}: image is {img.shape[1]}x{img.shape[0]}, camera expects "
                             f"{cam.width}x{cam.height}")
        images.append(img)
    points = load_ply(os.path.join(path, "points.ply"), mode="points")
    gt_path = os.path.join(path, "gt_splats.ply")
    gt = load_ply(gt_path, mode="splats") if os.path.exists(gt_path) else None
    spec = None
    if meta.get("spec"):
        s = meta["spec"]
        spec = SceneSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
    return SceneBundle(cams, images, points, np.asarray(meta["bounds"]), gt, meta["train"],
                       meta["test"], spec, meta["images"])
