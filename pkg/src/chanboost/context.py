"""Context rescoring: a quadratic feature map of detection geometry and
score, rescored by a deterministic linear max-margin model.

Each detection yields p = (x, y, w, h, s, 1) with coordinates normalized
by the image size and the score standardized by training statistics; the
feature vector is the 21-entry upper triangle of the outer product p p^T,
so it contains every pairwise product including the plain linear terms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PHI_DIM = 21
#: row-major upper-triangle order of the 6x6 outer product
PHI_PAIRS = tuple((i, j) for i in range(6) for j in range(i, 6))
#: component order of the augmented detection vector
P_COMPONENTS = ("x", "y", "w", "h", "s", "1")


@dataclass
class Rescorer:
    """Linear model over the 21 quadratic context features."""

    weights: np.ndarray     # (21,)
    bias: float
    p_mean: np.ndarray      # (6,) applied to (x,y,w,h,s,1) before the outer product
    p_scale: np.ndarray     # (6,)
    phi_mean: np.ndarray    # (21,)
    phi_scale: np.ndarray   # (21,)

    def __post_init__(self):
        if np.any(self.p_scale <= 0) or np.any(self.phi_scale <= 0):
            raise ValueError("normalization scales must be positive")


def _p_tilde(det, image_w, image_h, p_mean, p_scale):
    raw = np.array([det.box.x / image_w, det.box.y / image_h,
                    det.box.w / image_w, det.box.h / image_h,
                    det.score, 1.0])
    return (raw - p_mean) / p_scale


_ID_MEAN = np.zeros(6)
_ID_SCALE = np.ones(6)


def build_phi(det, image_w, image_h, p_mean=_ID_MEAN, p_scale=_ID_SCALE):
    """The 21 upper-triangle entries of the outer product of the
    normalized detection vector, in ``PHI_PAIRS`` order."""
    p = _p_tilde(det, image_w, image_h, p_mean, p_scale)
    return np.array([p[i] * p[j] for i, j in PHI_PAIRS])


def _objective(phis, y, w, b, lam):
    margins = y * (phis @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def _fit_linear(phis, y, lam, epochs):
    """Full-batch subgradient descent with a backtracking step size.

    Steps that would raise the objective are rejected and halve the step,
    so the per-epoch objective trajectory is non-increasing; the whole
    procedure is deterministic and sign-symmetric in the labels.
    """
    n, d = phis.shape
    w = np.zeros(d)
    b = 0.0
    eta = 1.0
    history = [_objective(phis, y, w, b, lam)]
    for _ in range(epochs):
        margins = y * (phis @ w + b)
        active = margins < 1.0
        gw = lam * w - (y[active, None] * phis[active]).sum(axis=0) / n
        gb = -float(y[active].sum()) / n
        cand_w = w - eta * gw
        cand_b = b - eta * gb
        cand_obj = _objective(phis, y, cand_w, cand_b, lam)
        if cand_obj <= history[-1]:
            w, b = cand_w, cand_b
            history.append(cand_obj)
            eta *= 1.2
        else:
            history.append(history[-1])
            eta *= 0.5
    return w, b, history


def train_rescorer(dets, labels, image_sizes, C: float = 1.0, epochs: int = 300,
                   return_history: bool = False):
    """Fit the hinge-loss linear model on matched detections.

    ``labels`` are +1 for true positives, -1 for false positives;
    ``image_sizes`` gives the (width, height) of each detection's image.
    Features are standardized by training statistics stored in the model.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if not ((labels > 0).any() and (labels < 0).any()):
        raise ValueError("need both true and false positives to train the rescorer")
    scores = np.array([d.score for d in dets], dtype=np.float64)
    p_mean = np.zeros(6)
    p_scale = np.ones(6)
    p_mean[4] = scores.mean()
    p_scale[4] = max(float(scores.std()), 1e-12)
    phis = np.stack([build_phi(d, iw, ih, p_mean, p_scale)
                     for d, (iw, ih) in zip(dets, image_sizes)])
    phi_mean = phis.mean(axis=0)
    phi_scale = np.maximum(phis.std(axis=0), 1e-12)
    z = (phis - phi_mean) / phi_scale
    w, b, history = _fit_linear(z, labels, 1.0 / C, epochs)
    r = Rescorer(weights=w, bias=b, p_mean=p_mean, p_scale=p_scale,
                 phi_mean=phi_mean, phi_scale=phi_scale)
    return (r, history) if return_history else r


def rescore(dets, rescorer: Rescorer, image_w, image_h):
    """Replace each detection's score with the linear model output;
    geometry is untouched."""
    out = []
    for d in dets:
        phi = build_phi(d, image_w, image_h, rescorer.p_mean, rescorer.p_scale)
        z = (phi - rescorer.phi_mean) / rescorer.phi_scale
        out.append(replace(d, score=float(z @ rescorer.weights + rescorer.bias)))
    return out
