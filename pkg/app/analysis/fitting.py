import logging
from typing import Tuple

import numpy as np

from ..engine import autodiff as ad
from ..engine.autodiff import Tape
from ..engine.optim import SGD
from ..engine.tensor import Matrix, check_square
from ..mixers.dense import InitPolicy, make_dense_mixer

logger = logging.getLogger(__name__)


def fit_dense_to_structured(M_target: Matrix, steps: int = 500, lr: float = 0.25,
                            init: InitPolicy = None) -> Tuple[np.ndarray, float]:
    """Gradient descent on ||M~ - M_target||_F^2 from a zero dense mixer.

    Returns the fitted matrix and the Frobenius residual.
    """
    target = np.asarray(M_target, dtype=np.float64)
    n = check_square(target, "target")
    dense = make_dense_mixer(n, init or InitPolicy.zero(), name="fit")
    optimizer = SGD([dense], lr=lr)
    taken = 0
    for taken in range(1, steps + 1):
        optimizer.zero_grad()
        tape = Tape()
        diff = tape.param(dense) - target
        loss = ad.sum(diff * diff)
        if float(loss.value) == 0.0:
            break
        tape.backward(loss)
        optimizer.step()
    residual = float(np.linalg.norm(dense.value - target))
    logger.debug(f"Dense fit of a {n}x{n} target: residual {residual:.3e} after {taken} steps")
    return dense.value.copy(), residual
