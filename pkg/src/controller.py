"""
Learning-rate control from the observed round loss reduction

Multiplicative increase while the federated loss keeps improving,
multiplicative decrease otherwise, clamped to [eta_min, eta_max].
"""
import logging
import math
from dataclasses import dataclass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerConfig:
    kappa_up: float = 1.05
    kappa_down: float = 0.7
    eta_min: float = 1e-4
    eta_max: float = 1.0

    def __post_init__(self):
        if not self.kappa_up > 1.0:
            raise ValueError(f"kappa_up must be > 1, got {self.kappa_up}")
        if not 0.0 < self.kappa_down < 1.0:
            raise ValueError(f"kappa_down must be in (0, 1), got {self.kappa_down}")
        if not 0.0 < self.eta_min <= self.eta_max:
            raise ValueError(
                f"eta_min must satisfy 0 < eta_min <= eta_max, got {self.eta_min} and {self.eta_max}"
            )


def compute_delta_loss(loss_before, loss_after):
    """Positive means the round improved the loss"""
    if not (math.isfinite(loss_before) and math.isfinite(loss_after)):
        raise ValueError(f"losses must be finite, got {loss_before} and {loss_after}")
    return loss_before - loss_after


def update_lr(eta, delta_loss, cfg):
    # delta_loss == 0 counts as no improvement
    if delta_loss > 0:
        new_eta = eta * cfg.kappa_up
    else:
        new_eta = eta * cfg.kappa_down
    return min(max(new_eta, cfg.eta_min), cfg.eta_max)


class LearningRateController:
    """Stateful wrapper holding the current rate between rounds"""

    def __init__(self, cfg, eta0):
        self.cfg = cfg
        self.eta = min(max(eta0, cfg.eta_min), cfg.eta_max)
        if self.eta != eta0:
            logger.warning("eta0=%g clamped into [%g, %g]", eta0, cfg.eta_min, cfg.eta_max)

    def step(self, loss_before, loss_after):
        delta = compute_delta_loss(loss_before, loss_after)
        old = self.eta
        self.eta = update_lr(self.eta, delta, self.cfg)
        logger.debug("delta_loss=%.6g eta %.6g -> %.6g", delta, old, self.eta)
        return self.eta
