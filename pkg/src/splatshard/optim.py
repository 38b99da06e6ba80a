"""Adaptive-moment optimizer whose state rows travel with their splats."""
import numpy as np

from .splat import SplatSet

DEFAULT_LRS = {
    "mu": 1.6e-4,
    "sh_dc": 0.0025,
    "sh_rest": 0.0025 / 20.0,
    "opacity_logit": 0.05,
    "log_scale": 0.005,
    "rotation": 0.001,
}


class Adam:
    PARAMS = SplatSet.PARAM_NAMES

    def __init__(self, splats: SplatSet, betas=(0.9, 0.999), eps=1e-15, state=None, step=0):
        self.betas = betas
        self.eps = eps
        self.step_count = int(step)
        if state is None:
            state = {}
            for name in self.PARAMS:
                z = np.zeros_like(getattr(splats, name))
                state["m_" + name] = z
                state["v_" + name] = z.copy()
        self.state = state

    def lr_array(self, name, lrs, shape):
        if name == "sh":
            lr = np.full(shape[1], lrs["sh_rest"])
            lr[0] = lrs["sh_dc"]
            return lr[None, :, None]
        return lrs[name]

    def step(self, splats: SplatSet, grads: dict, lrs: dict):
        """One in-place update of every parameter group of ``splats``."""
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name in self.PARAMS:
            g = grads[name]
            m = self.state["m_" + name]
            v = self.state["v_" + name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p = getattr(splats, name)
            lr = self.lr_array(name, lrs, p.shape)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return {k: v[rows] for k, v in self.state.items()}

    @staticmethod
    def concat_states(states):
        return {k: np.concatenate([s[k] for s in states]) for k in states[0]}


def exp_decay_lr(step, total, start=1.6e-4, end=1.6e-6):
    """Log-linear interpolation from ``start`` (step 0) to ``end`` (step ``total``)."""
    if total <= 0:
        return start
    t = min(max(step / total, 0.0), 1.0)
    if t == 0.0:
        return start
    if t == 1.0:
        return end
    return float(np.exp(np.log(start) * (1.0 - t) + np.log(end) * t))
