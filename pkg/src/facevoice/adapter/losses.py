"""Per-sample loss terms and the moving-average class centers."""

import numpy as np

from .._validation import ValidationError, check_vector
from .objective import cen_loss, con_loss, rec_loss


def _rows(batch):
    """Split a sequence of ``(s, label)`` pairs into a matrix and a label tuple."""
    batch = list(batch)
    if not batch:
        raise ValidationError("empty batch")
    S = np.asarray([np.asarray(s, dtype=np.float64) for s, _ in batch])
    return S, tuple(str(lab) for _, lab in batch)


def loss_rec(s_pred, s_target):
    """``1 - cos(s_pred, s_target)``."""
    s_pred = check_vector(s_pred, name="s_pred")
    s_target = check_vector(s_target, dim=s_pred.shape[0], name="s_target")
    if not np.linalg.norm(s_pred) > 0 or not np.linalg.norm(s_target) > 0:
        raise ValidationError("reconstruction loss is undefined for a zero-norm embedding")
    return float(rec_loss(s_pred[None], s_target[None]))


def loss_con(batch, margin=0.2):
    """Mean over unordered pairs: ``1 - cos`` for same label, ``max(0, cos - m)`` otherwise."""
    S, labels = _rows(batch)
    if S.shape[0] < 2:
        raise ValidationError("the contrastive loss needs a batch of at least 2")
    if np.any(np.linalg.norm(S, axis=1) == 0):
        raise ValidationError("contrastive loss is undefined for a zero-norm embedding")
    return float(con_loss(S, labels, margin))


class CenterBank:
    """Exponential moving-average class centers ``c <- alpha * s + (1 - alpha) * c``."""

    def __init__(self, alpha=0.5, dim=192):
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
        self.alpha = alpha
        self.dim = int(dim)
        self.centers = {}

    def __contains__(self, label):
        return str(label) in self.centers

    def __len__(self):
        return len(self.centers)

    def get(self, label):
        label = str(label)
        if label not in self.centers:
            raise ValidationError(f"no initialized center for class {label!r}")
        return self.centers[label]

    def matrix(self, labels):
        return np.stack([self.get(lab) for lab in labels])

    def update(self, s, label):
        s = np.array(s, dtype=np.float64)
        if s.shape != (self.dim,):
            raise ValidationError(f"center update expects a {self.dim}-vector, got shape {s.shape}")
        label = str(label)
        if label not in self.centers:
            self.centers[label] = s
        else:
            self.centers[label] = self.alpha * s + (1.0 - self.alpha) * self.centers[label]

    def copy(self):
        out = CenterBank(self.alpha, self.dim)
        out.centers = {k: v.copy() for k, v in self.centers.items()}
        return out


def update_centers(bank, batch):
    """Apply the moving-average rule in batch order; returns ``bank``."""
    for s, label in batch:
        bank.update(s, label)
    return bank


def loss_cen(batch, bank):
    """``0.5 * sum_n ||s_n - c_{y_n}||^2`` (a sum over the batch, not a mean)."""
    S, labels = _rows(batch)
    return float(cen_loss(S, bank.matrix(labels)))
