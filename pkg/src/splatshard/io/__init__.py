"""File formats: PLY, camera JSON, images, metrics, synthetic scenes."""
from .cameras import CameraSchemaError, load_cameras, save_cameras
from .images import read_image, write_image
from .metrics import metrics, psnr, ssim
from .ply import PlyError, PointCloud, UnsupportedFormatError, load_ply, save_ply, save_splats_ply
from .synth import SceneBundle, SceneSpec, load_bundle, random_splats, synth_scene, write_bundle
