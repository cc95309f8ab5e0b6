"""AdamW update rule with decoupled weight decay and bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class OptState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "OptState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), t=0)


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: OptState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, OptState]:
    """One AdamW step; pure function, returns (new_param, new_state).

    theta' = theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
    """
    param = np.asarray(param)
    grad = np.asarray(grad)
    if param.shape != grad.shape or param.shape != state.m.shape or param.shape != state.v.shape:
        raise ShapeError(f"adamw_step: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"adamw_step: betas out of range ({beta1}, {beta2})")
    if lr < 0.0:
        raise ValueError(f"adamw_step: negative lr {lr}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("adamw_step: non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_param = param * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, OptState(m=m, v=v, t=t)


@dataclass
class AdamW:
    """Keeps OptState per named parameter and steps a whole parameter dict."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    states: dict[str, OptState] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], lr: float) -> dict[str, Tensor]:
        """Apply one update from each param's .grad; returns fresh leaf tensors."""
        new_params: dict[str, Tensor] = {}
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"AdamW.step: parameter '{name}' has no gradient")
            state = self.states.get(name)
            if state is None:
                state = OptState.zeros_like(p.data)
            new_data, new_state = adamw_step(
                p.data, p.grad, state, lr,
                beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                weight_decay=self.weight_decay,
            )
            self.states[name] = new_state
            new_params[name] = Tensor(new_data, requires_grad=True)
        return new_params

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flatten moments (plus step counters) for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name, s in self.states.items():
            out[f"opt.m.{name}"] = s.m
            out[f"opt.v.{name}"] = s.v
            out[f"opt.t.{name}"] = np.asarray([float(s.t)])
        return out

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray], **kwargs) -> "AdamW":
        opt = cls(**kwargs)
        for key, arr in arrays.items():
            if key.startswith("opt.m."):
                name = key[len("opt.m."):]
                opt.states[name] = OptState(
                    m=arr,
                    v=arrays[f"opt.v.{name}"],
                    t=int(arrays[f"opt.t.{name}"][0]),
                )
        return opt
