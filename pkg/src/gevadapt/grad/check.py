"""Central finite-difference verification of every reverse-mode rule.

Each registered op exposes a scalar loss over named variables and its
analytic gradient. The checker perturbs every real degree of freedom
(real and imaginary parts separately; Hermitian inputs along a Hermitian
basis) and compares directional derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import am, beamform, linalg, maskestim, nn
from ..errors import InvalidConfigError, NotFoundError
from ..signal import MelBank, log_mel, log_mel_vjp, mel_bank
from .beam import apply_vjp, ban_vjp, cov_vjp
from .matrix import eig_chain_vjp, qr_vjp
from .pipeline import System, pipeline_forward, pipeline_vjp


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    tested_entries: int
    eps: float
    tol: float = float("nan")
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.op_name:<18} seed={self.seed!s:<4} dofs={self.tested_entries:<5} "
                f"eps={self.eps:.0e} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} {status}")


@dataclass
class CheckPoint:
    variables: dict                       # name -> ndarray
    kinds: dict                           # name -> "real" | "complex" | "hermitian"
    constants: dict = field(default_factory=dict)


@dataclass
class CheckableOp:
    name: str
    make_point: Callable[[np.random.Generator], CheckPoint]
    loss: Callable[[CheckPoint, dict], float]
    grad: Callable[[CheckPoint], dict]
    eps: float
    tol: float


REGISTRY: dict[str, CheckableOp] = {}


def register(op: CheckableOp) -> CheckableOp:
    REGISTRY[op.name] = op
    return op


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _inner(a, b) -> float:
    return float(np.real(np.sum(np.conj(a) * b)))


def _herm_psd(rng, batch, n, dof=None):
    b = _crandn(rng, batch, n, dof or 2 * n)
    return b @ np.conj(np.swapaxes(b, -1, -2)) / (dof or 2 * n)


def directions(arr: np.ndarray, kind: str):
    """Yield unit perturbations spanning the real degrees of freedom of ``arr``."""
    if kind == "real":
        for idx in np.ndindex(arr.shape):
            e = np.zeros(arr.shape)
            e[idx] = 1.0
            yield e
    elif kind == "complex":
        for idx in np.ndindex(arr.shape):
            for unit in (1.0, 1j):
                e = np.zeros(arr.shape, dtype=np.complex128)
                e[idx] = unit
                yield e
    elif kind == "hermitian":
        n = arr.shape[-1]
        for batch in np.ndindex(arr.shape[:-2]):
            for i in range(n):
                for j in range(i, n):
                    units = (1.0,) if i == j else (1.0, 1j)
                    for unit in units:
                        e = np.zeros(arr.shape, dtype=np.complex128)
                        e[batch + (i, j)] = unit
                        e[batch + (j, i)] = np.conj(unit)
                        yield e
    else:
        raise InvalidConfigError(f"unknown variable kind {kind!r}")


def finite_diff_check(op_id: str, input_point: CheckPoint | None = None,
                      eps: float | None = None, seed: int = 0,
                      tol: float | None = None) -> GradCheckReport:
    """Compare analytic and central-difference directional derivatives.

    The relative error per degree of freedom is
    ``|a - n| / max(|a|, |n|, 1e-12)``; the report carries the maximum.
    """
    try:
        op = REGISTRY[op_id]
    except KeyError:
        raise NotFoundError(f"no checkable op named {op_id!r}") from None
    eps = op.eps if eps is None else eps
    if not eps > 0:
        raise InvalidConfigError("finite-difference step must be positive")
    point = input_point if input_point is not None else op.make_point(np.random.default_rng(seed))
    analytic = op.grad(point)
    worst, count = 0.0, 0
    for name, value in point.variables.items():
        for e in directions(value, point.kinds[name]):
            plus = dict(point.variables)
            minus = dict(point.variables)
            plus[name] = value + eps * e
            minus[name] = value - eps * e
            numeric = (op.loss(point, plus) - op.loss(point, minus)) / (2.0 * eps)
            exact = _inner(analytic[name], e)
            denom = max(abs(exact), abs(numeric), 1e-12)
            worst = max(worst, abs(exact - numeric) / denom)
            count += 1
    return GradCheckReport(op.name, worst, count, eps, op.tol if tol is None else tol, seed)


def run_all(seeds=range(1), ops=None) -> list[GradCheckReport]:
    names = list(REGISTRY) if ops is None else list(ops)
    return [finite_diff_check(name, seed=int(s)) for name in names for s in seeds]


# --- registered ops ---------------------------------------------------------

def _log_mel_point(rng):
    bank = mel_bank()
    power = rng.uniform(0.1, 1.0, size=bank.weights.shape[1])
    return CheckPoint({"power": power}, {"power": "real"},
                      {"bank": bank, "cot": rng.standard_normal(bank.n_mels)})


register(CheckableOp(
    "log_mel", _log_mel_point,
    lambda p, v: _inner(p.constants["cot"], log_mel(v["power"], p.constants["bank"])),
    lambda p: {"power": log_mel_vjp(p.variables["power"], p.constants["bank"], p.constants["cot"])},
    eps=1e-5, tol=1e-6))


def _qr_point(rng, n=4):
    return CheckPoint({"a": _crandn(rng, n, n)}, {"a": "complex"},
                      {"q_bar": _crandn(rng, n, n), "r_bar": _crandn(rng, n, n)})


def _qr_loss(p, v):
    f = linalg.qr_decompose(v["a"])
    return _inner(p.constants["q_bar"], f.q) + _inner(p.constants["r_bar"], f.r)


def _qr_grad(p):
    a = p.variables["a"]
    f = linalg.qr_decompose(a)
    return {"a": qr_vjp(a, f.q, f.r, p.constants["q_bar"], p.constants["r_bar"])}


register(CheckableOp("qr_vjp", _qr_point, _qr_loss, _qr_grad, eps=1e-6, tol=1e-5))


def _cov_point(rng, m=2, t=3, f=4):
    y = _crandn(rng, m, t, f)
    mask = rng.uniform(0.05, 1.0, size=(t, f))
    cot = _crandn(rng, f, m, m)
    return CheckPoint({"mask": mask}, {"mask": "real"}, {"y": y, "cot": cot})


register(CheckableOp(
    "cov_vjp", _cov_point,
    lambda p, v: _inner(p.constants["cot"], beamform.spatial_covariance(p.constants["y"], v["mask"]).phi),
    lambda p: {"mask": cov_vjp(p.constants["y"], p.variables["mask"], p.constants["cot"])},
    eps=1e-6, tol=1e-6))


def _eig_point(rng, m=3, f=2):
    pxx = _herm_psd(rng, f, m)
    pnn = _herm_psd(rng, f, m) + 0.1 * np.eye(m)
    return CheckPoint({"phi_xx": pxx, "phi_nn": pnn},
                      {"phi_xx": "hermitian", "phi_nn": "hermitian"},
                      {"cot": _crandn(rng, f, m), "k": 5})


def _eig_loss(p, v):
    w = beamform.gev_vector(v["phi_xx"], v["phi_nn"], p.constants["k"])
    return _inner(p.constants["cot"], w.w)


def _eig_grad(p):
    w = beamform.gev_vector(p.variables["phi_xx"], p.variables["phi_nn"], p.constants["k"])
    gxx, gnn = eig_chain_vjp(w.record, p.constants["cot"])
    return {"phi_xx": gxx, "phi_nn": gnn}


register(CheckableOp("eig_chain_vjp", _eig_point, _eig_loss, _eig_grad, eps=1e-6, tol=1e-4))


def _ban_point(rng, m=3, f=3):
    w = _crandn(rng, f, m)
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    pnn = _herm_psd(rng, f, m) + 0.1 * np.eye(m)
    return CheckPoint({"w": w, "phi_nn": pnn}, {"w": "complex", "phi_nn": "hermitian"},
                      {"cot": _crandn(rng, f, m)})


def _ban_loss(p, v):
    return _inner(p.constants["cot"], beamform.ban_scale(v["w"], v["phi_nn"]).w)


def _ban_grad(p):
    out = beamform.ban_scale(p.variables["w"], p.variables["phi_nn"])
    gw, gphi = ban_vjp(out.record, p.constants["cot"])
    return {"w": gw, "phi_nn": gphi}


register(CheckableOp("ban", _ban_point, _ban_loss, _ban_grad, eps=1e-5, tol=1e-5))


def _apply_point(rng, m=3, t=4, f=3):
    return CheckPoint({"w": _crandn(rng, f, m)}, {"w": "complex"},
                      {"y": _crandn(rng, m, t, f), "cot": _crandn(rng, t, f)})


register(CheckableOp(
    "beamform_apply", _apply_point,
    lambda p, v: _inner(p.constants["cot"], beamform.apply_beamformer(v["w"], p.constants["y"])),
    lambda p: {"w": apply_vjp(p.variables["w"], p.constants["y"], p.constants["cot"])},
    eps=1e-6, tol=1e-6))


def _median_point(rng, m=6, t=4, f=3):
    return CheckPoint({"masks": rng.uniform(0, 1, size=(m, t, f))}, {"masks": "real"},
                      {"cot": rng.standard_normal((t, f))})


register(CheckableOp(
    "median_mask", _median_point,
    lambda p, v: _inner(p.constants["cot"], maskestim.median_mask(v["masks"])),
    lambda p: {"masks": maskestim.median_mask_vjp(p.variables["masks"], p.constants["cot"])},
    eps=1e-7, tol=1e-6))


def _store_with(store: nn.ParamStore, variables: dict) -> nn.ParamStore:
    out = store.copy()
    out.params.update({k: np.array(v) for k, v in variables.items()})
    return out


def _masknet_point(rng, recurrent=False):
    cfg = maskestim.MaskNetConfig(input_dim=5, hidden_dims=(4, 3) if recurrent else (4,),
                                  recurrent_first_layer=recurrent,
                                  seed=int(rng.integers(1 << 31)))
    store = maskestim.init_params(cfg)
    mag = np.abs(_crandn(rng, 2, 6, 5))
    return CheckPoint({k: v.copy() for k, v in store.params.items()},
                      {k: "real" for k in store.params},
                      {"cfg": cfg, "store": store, "mag": mag,
                       "noise_cot": rng.standard_normal((2, 6, 5)),
                       "speech_cot": rng.standard_normal((2, 6, 5))})


def _masknet_loss(p, v):
    pair = maskestim.forward(p.constants["mag"], _store_with(p.constants["store"], v), p.constants["cfg"])
    return _inner(p.constants["noise_cot"], pair.noise) + _inner(p.constants["speech_cot"], pair.speech)


def _masknet_grad(p):
    store = _store_with(p.constants["store"], p.variables)
    store.zero_grad()
    _, rec = maskestim.forward(p.constants["mag"], store, p.constants["cfg"], return_record=True)
    maskestim.backward(rec, maskestim.MaskPair(speech=p.constants["speech_cot"],
                                               noise=p.constants["noise_cot"]), store)
    return dict(store.grads)


register(CheckableOp("masknet_backward", _masknet_point, _masknet_loss, _masknet_grad,
                     eps=1e-6, tol=1e-5))
register(CheckableOp("masknet_rnn_backward", lambda rng: _masknet_point(rng, True),
                     _masknet_loss, _masknet_grad, eps=1e-6, tol=1e-5))


def _am_point(rng):
    cfg = am.AmConfig(n_states=3, context=1, hidden_dims=(6,), seed=int(rng.integers(1 << 31)),
                      n_features=4)
    store = am.init_params(cfg)
    return CheckPoint({"features": rng.standard_normal((5, 4))}, {"features": "real"},
                      {"cfg": cfg, "store": store, "targets": rng.integers(0, 3, size=5)})


def _am_loss(p, v):
    return am.ce_loss(am.am_forward(v["features"], p.constants["store"], p.constants["cfg"]),
                      p.constants["targets"])


def _am_grad(p):
    post, rec = am.am_forward(p.variables["features"], p.constants["store"], p.constants["cfg"],
                              return_record=True)
    g = am.ce_logit_grad(post, p.constants["targets"])
    return {"features": am.am_backward(rec, g, p.constants["store"], p.constants["cfg"],
                                       need_params=False)}


register(CheckableOp("am_backward", _am_point, _am_loss, _am_grad, eps=1e-6, tol=1e-5))


def tiny_system(rng, m=2, t=6, f=5, n_states=3):
    """Scene-free miniature of the full pipeline (M=2, T=6, F=5)."""
    mask_cfg = maskestim.MaskNetConfig(input_dim=f, hidden_dims=(4,),
                                       seed=int(rng.integers(1 << 31)))
    am_cfg = am.AmConfig(n_states=n_states, context=1, hidden_dims=(8,),
                         seed=int(rng.integers(1 << 31)))
    am_params = am.init_params(am_cfg).freeze()
    bank = MelBank(rng.uniform(0.05, 1.0, size=(am_cfg.n_features, f)))
    system = System(mask_cfg, maskestim.init_params(mask_cfg), am_cfg, am_params, bank)
    y = _crandn(rng, m, t, f)
    targets = rng.integers(0, n_states, size=t)
    return system, y, targets


def _pipeline_point(rng):
    system, y, targets = tiny_system(rng)
    params = system.mask_params.params
    return CheckPoint({k: v.copy() for k, v in params.items()}, {k: "real" for k in params},
                      {"system": system, "y": y, "targets": targets})


def _pipeline_loss(p, v):
    system = p.constants["system"]
    probe = System(system.mask_cfg, _store_with(system.mask_params, v), system.am_cfg,
                   system.am_params, system.bank, system.stft_cfg, system.k_iters,
                   system.loading, system.variant)
    return pipeline_forward(probe, p.constants["y"], p.constants["targets"]).loss


def _pipeline_grad(p):
    system = p.constants["system"]
    probe = System(system.mask_cfg, _store_with(system.mask_params, p.variables), system.am_cfg,
                   system.am_params, system.bank, system.stft_cfg, system.k_iters,
                   system.loading, system.variant)
    probe.mask_params.zero_grad()
    rec = pipeline_forward(probe, p.constants["y"], p.constants["targets"])
    return pipeline_vjp(1.0, rec, probe)


register(CheckableOp("pipeline_vjp", _pipeline_point, _pipeline_loss, _pipeline_grad,
                     eps=1e-6, tol=1e-4))
