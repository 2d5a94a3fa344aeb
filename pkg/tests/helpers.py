"""Random scenes and cameras shared by the test modules."""
import numpy as np

from hybridgs import gaussmath as gm
from hybridgs.raster import look_at
from hybridgs.scene import DynamicPool, HybridScene, StaticPool
from hybridgs.sh import num_coeffs


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_rot4(rng):
    return gm.rot4_from_pair(*random_unit_quats(rng, 2))


def random_scene(rng, n_static, n_dynamic, sh_degree=1, tau=0.5, spread=1.0, scale=(-2.5, -1.2)):
    """Gaussians scattered around the origin, visible from cameras at distance ~4."""
    k = num_coeffs(sh_degree)
    statics = StaticPool(
        means=rng.uniform(-spread, spread, (n_static, 3)),
        quats=random_unit_quats(rng, n_static),
        log_scales=rng.uniform(*scale, (n_static, 3)),
        opacity_logits=rng.uniform(-1.0, 3.0, n_static),
        sh=rng.normal(scale=0.4, size=(n_static, k, 3)),
    )
    dynamics = DynamicPool(
        means=np.column_stack([rng.uniform(-spread, spread, (n_dynamic, 3)), rng.uniform(0, 1, n_dynamic)]),
        quats_left=random_unit_quats(rng, n_dynamic),
        quats_right=random_unit_quats(rng, n_dynamic),
        log_scales=np.column_stack([rng.uniform(*scale, (n_dynamic, 3)),
                                    rng.uniform(np.log(0.1), np.log(0.6), n_dynamic)]),
        opacity_logits=rng.uniform(-1.0, 3.0, n_dynamic),
        sh=rng.normal(scale=0.4, size=(n_dynamic, k, 3)),
    )
    return HybridScene(statics, dynamics, tau, 1.0, sh_degree)


def random_camera(rng, width=64, height=64, radius=4.0):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    eye = radius * d
    up = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    f = rng.uniform(0.8, 1.3) * width
    return look_at(eye, rng.normal(scale=0.2, size=3), f, f, width, height, down=up)

