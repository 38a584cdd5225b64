"""Adam with bias correction, keyed by parameter name."""

import numpy as np


class Adam:
    """Adam over a ``{name: Tensor}`` mapping.

    Step counters are kept per parameter so layers added at a growth step
    start their bias correction from scratch while transferred layers keep
    their moments.
    """

    def __init__(self, params, lr=1e-3, betas=(0.0, 0.99), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m, self.v, self.steps = {}, {}, {}
        self.attach(params)

    def attach(self, params):
        """Point the optimizer at a (possibly grown) parameter set.

        Moments of names that survive are kept; new names start at zero and
        names no longer present are dropped.
        """
        self.params = params
        for name in list(self.m):
            if name not in params:
                del self.m[name], self.v[name], self.steps[name]
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.steps[name] = 0

    def step(self, grads):
        """Apply one update. ``grads`` maps names to ndarrays; missing names are skipped."""
        updates = {}
        for name, g in grads.items():
            p = self.params[name]
            g = np.asarray(g, dtype=p.dtype)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {name}")
            t = self.steps[name] + 1
            m = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            new = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.isfinite(new).all():
                raise FloatingPointError(f"non-finite Adam update for {name}")
            updates[name] = (new.astype(p.dtype, copy=False), m, v, t)
        # commit only after every update has been validated
        for name, (new, m, v, t) in updates.items():
            self.params[name].data = new
            self.m[name], self.v[name], self.steps[name] = m, v, t

    def state_dict(self):
        return {"m": dict(self.m), "v": dict(self.v), "steps": dict(self.steps)}

    def load_state_dict(self, state):
        for name in self.params:
            self.m[name] = np.array(state["m"][name], dtype=self.params[name].dtype)
            self.v[name] = np.array(state["v"][name], dtype=self.params[name].dtype)
            self.steps[name] = int(state["steps"][name])


def adam_step(params, grads, state, lr=1e-3, beta1=0.0, beta2=0.99, eps=1e-8):
    """Functional form: build or reuse ``state`` (an :class:`Adam`) and update in place."""
    if state is None:
        state = Adam(params, lr, (beta1, beta2), eps)
    state.lr, state.beta1, state.beta2, state.eps = lr, beta1, beta2, eps
    state.step(grads)
    return params, state
