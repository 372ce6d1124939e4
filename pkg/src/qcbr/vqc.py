"""Data re-uploading variational quantum classifier.

Every qubit of every layer receives one trainable block per data coordinate::

    U(x_k) = RX(w * x_k + t_a) . RZ(t_b)

(RZ acts first).  When entanglement is enabled, a linear chain of two-qubit
gates ``i -> i+1`` closes each layer.  A class ``c`` is identified with a
computational basis state of the full register and scored by the fidelity
``F_c = |<c|psi(x)>|^2`` times a trainable class weight ``alpha_c``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import qsim
from .errors import InvalidArgument, OptimizationFailure, TrainingFailure
from .optim import OptimizerConfig, OptimizerKind, minimize

FORMAT_VERSION = 1


class Entanglement(str, Enum):
    NONE = "NONE"
    CRZ = "CRZ"
    CNOT = "CNOT"
    CZ = "CZ"


@dataclass(frozen=True)
class AnsatzConfig:
    num_qubits: int
    num_layers: int
    data_dim: int
    entanglement: Entanglement = Entanglement.NONE

    def __post_init__(self):
        object.__setattr__(self, "entanglement", Entanglement(self.entanglement))
        if min(self.num_qubits, self.num_layers, self.data_dim) < 1:
            raise InvalidArgument("qubits, layers and data_dim must all be positive")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int


@dataclass
class ClassifierModel:
    config: AnsatzConfig
    thetas: np.ndarray
    omegas: np.ndarray
    alphas: np.ndarray
    num_classes: int
    class_basis: list[int]
    feature_low: Optional[np.ndarray] = None
    feature_high: Optional[np.ndarray] = None

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.omegas = np.asarray(self.omegas, dtype=float)
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.class_basis = [int(b) for b in self.class_basis]
        n_t, n_w = param_count(self.config)
        if self.thetas.shape != (n_t,) or self.omegas.shape != (n_w,):
            raise InvalidArgument(
                f"expected {n_t} thetas and {n_w} omegas, got {self.thetas.size} and {self.omegas.size}"
            )
        if self.alphas.shape != (self.num_classes,) or len(self.class_basis) != self.num_classes:
            raise InvalidArgument("need one alpha and one basis target per class")
        dim = 2 ** self.config.num_qubits
        if self.num_classes > dim:
            raise InvalidArgument(f"{self.num_classes} classes do not fit in {dim} basis states")
        if len(set(self.class_basis)) != self.num_classes or not all(0 <= b < dim for b in self.class_basis):
            raise InvalidArgument("class_basis must be injective into the register's basis")

    @property
    def parameters(self) -> np.ndarray:
        return np.concatenate([self.thetas, self.omegas, self.alphas])

    def with_parameters(self, vector) -> "ClassifierModel":
        n_t, n_w = self.thetas.size, self.omegas.size
        v = np.asarray(vector, dtype=float)
        return replace(self, thetas=v[:n_t], omegas=v[n_t:n_t + n_w], alphas=v[n_t + n_w:])

    def normalize(self, X: np.ndarray) -> np.ndarray:
        if self.feature_low is None:
            return X
        span = self.feature_high - self.feature_low
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (X - self.feature_low) / safe - 1.0, 0.0)


def param_count(config: AnsatzConfig) -> tuple[int, int]:
    """Return ``(num_thetas, num_omegas)`` consumed by the ansatz."""
    blocks = config.num_qubits * config.num_layers * config.data_dim
    chain = config.num_qubits - 1
    n_thetas = 2 * blocks
    if config.entanglement is Entanglement.CRZ:
        n_thetas += chain * config.num_layers
    return n_thetas, blocks


def init_model(config: AnsatzConfig, num_classes: int, seed: int = 0,
               class_basis: Optional[Sequence[int]] = None,
               angle_range: float = np.pi) -> ClassifierModel:
    """Uniform(-r, r) angles and data weights (r = ``angle_range``), unit class weights.

    Deep circuits on many coordinates start out very oscillatory in the
    features at r = pi; a range near 1 keeps the initial map smooth.
    """
    if not angle_range > 0:
        raise InvalidArgument("angle_range must be positive")
    rng = np.random.default_rng(seed)
    n_t, n_w = param_count(config)
    return ClassifierModel(
        config=config,
        thetas=rng.uniform(-angle_range, angle_range, n_t),
        omegas=rng.uniform(-angle_range, angle_range, n_w),
        alphas=np.ones(num_classes),
        num_classes=num_classes,
        class_basis=list(range(num_classes)) if class_basis is None else list(class_basis),
    )


def fit_normalization(model: ClassifierModel, X) -> ClassifierModel:
    X = np.asarray(X, dtype=float)
    return replace(model, feature_low=X.min(axis=0), feature_high=X.max(axis=0))


# ---------------------------------------------------------------------------
# simulation


def _as_matrix(model: ClassifierModel, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != model.config.data_dim:
        raise InvalidArgument(f"expected {model.config.data_dim} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("features must be finite")
    return X


def _layout(model: ClassifierModel):
    """Split the flat parameter vectors into (block thetas (L,q,d,2), chain thetas (L,q-1|0), omegas (L,q,d))."""
    cfg = model.config
    L, q, d = cfg.num_layers, cfg.num_qubits, cfg.data_dim
    n_chain = q - 1 if cfg.entanglement is Entanglement.CRZ else 0
    thetas = model.thetas.reshape(L, 2 * q * d + n_chain)
    return (thetas[:, :2 * q * d].reshape(L, q, d, 2), thetas[:, 2 * q * d:],
            model.omegas.reshape(L, q, d))


def _block_entries(phi: np.ndarray, beta: np.ndarray):
    """Entries of RX(phi) . RZ(beta), broadcast over the argument shapes."""
    half = 0.5 * phi
    c, s = np.cos(half), np.sin(half)
    cb, sb = np.cos(0.5 * beta), np.sin(0.5 * beta)
    cc, cs, sc, ss = c * cb, c * sb, s * cb, s * sb
    return (_complex(cc, -cs), _complex(ss, -sc), _complex(-ss, -sc), _complex(cc, cs))


def _complex(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    out = np.empty(re.shape, dtype=complex)
    out.real, out.imag = re, im
    return out


def _block_angles(model: ClassifierModel, X: np.ndarray):
    """RX angles of shape (L, d, M, q) and RZ angles of shape (L, d, 1, q)."""
    block_t, _, omegas = _layout(model)
    w = omegas.transpose(0, 2, 1)[:, :, None, :]
    phi = X.T[None, :, :, None] * w + block_t[..., 0].transpose(0, 2, 1)[:, :, None, :]
    phi = np.ascontiguousarray(phi)
    beta = block_t[..., 1].transpose(0, 2, 1)[:, :, None, :]
    return phi, beta


def _encode_batch(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Amplitudes of shape (samples, 2**q) for already validated raw features."""
    cfg = model.config
    q, L, d = cfg.num_qubits, cfg.num_layers, cfg.data_dim
    X = model.normalize(X)
    M = X.shape[0]
    phi, beta = _block_angles(model, X)
    blocks = _block_entries(phi, beta)

    if cfg.entanglement is Entanglement.NONE:
        # qubits never interact: each one evolves through its L*d blocks alone
        zero, one = _sweep([b.reshape(L * d, M, q) for b in blocks])
        return _product_state(zero, one)

    _, chain_t, _ = _layout(model)
    chain = [(i, i + 1) for i in range(q - 1)]
    cz = qsim.cz_diagonal(chain, q) if cfg.entanglement is Entanglement.CZ else None
    amps = np.zeros((M, 2 ** q), dtype=complex)
    amps[:, 0] = 1.0
    for layer in range(L):
        u = _chain_product([b[layer] for b in blocks])  # (M, q) per entry
        for qubit in range(q):
            mat = np.stack([np.stack([u[0][:, qubit], u[1][:, qubit]], -1),
                            np.stack([u[2][:, qubit], u[3][:, qubit]], -1)], -2)
            amps = qsim.apply_1q(amps, mat, qubit, q)
        if cfg.entanglement is Entanglement.CRZ:
            for (c_q, t_q), angle in zip(chain, chain_t[layer]):
                amps = qsim.apply_phase(amps, qsim.crz_diagonal(angle, c_q, t_q, q))
        elif cfg.entanglement is Entanglement.CNOT:
            for c_q, t_q in chain:
                amps = qsim.apply_cnot(amps, c_q, t_q, q)
        else:
            amps = qsim.apply_phase(amps, cz)
    return amps


def _sweep(seq, keep: bool = False):
    """Push |0> through a sequence of 2x2 blocks (leading axis, index 0 first).

    Returns the final single-qubit amplitudes; with ``keep`` also the states
    entering every block, shaped like the entries.
    """
    b00, b01, b10, b11 = seq
    a0 = np.ones(b00.shape[1:], dtype=complex)
    a1 = np.zeros(b00.shape[1:], dtype=complex)
    if keep:
        in0 = np.empty(b00.shape, dtype=complex)
        in1 = np.empty(b00.shape, dtype=complex)
    for j in range(b00.shape[0]):
        if keep:
            in0[j], in1[j] = a0, a1
        a0, a1 = b00[j] * a0 + b01[j] * a1, b10[j] * a0 + b11[j] * a1
    return (a0, a1, in0, in1) if keep else (a0, a1)


def _suffixes(seq):
    """Products of the blocks after each position: S_j = B_{N-1} ... B_{j+1}."""
    b00, b01, b10, b11 = seq
    shape = b00.shape
    s = [np.empty(shape, dtype=complex) for _ in range(4)]
    m00, m01 = np.ones(shape[1:], dtype=complex), np.zeros(shape[1:], dtype=complex)
    m10, m11 = np.zeros(shape[1:], dtype=complex), np.ones(shape[1:], dtype=complex)
    for j in range(shape[0] - 1, -1, -1):
        s[0][j], s[1][j], s[2][j], s[3][j] = m00, m01, m10, m11
        m00, m01, m10, m11 = (m00 * b00[j] + m01 * b10[j], m00 * b01[j] + m01 * b11[j],
                              m10 * b00[j] + m11 * b10[j], m10 * b01[j] + m11 * b11[j])
    return s


def _chain_product(entries):
    """Ordered product of 2x2 matrices along the leading axis (index 0 acts first)."""
    m00, m01, m10, m11 = (e[0] for e in entries)
    for j in range(1, entries[0].shape[0]):
        b00, b01, b10, b11 = (e[j] for e in entries)
        m00, m01, m10, m11 = (b00 * m00 + b01 * m10, b00 * m01 + b01 * m11,
                              b10 * m00 + b11 * m10, b10 * m01 + b11 * m11)
    return m00, m01, m10, m11


def _product_state(zero_amp: np.ndarray, one_amp: np.ndarray) -> np.ndarray:
    """Register amplitudes from per-qubit amplitudes of shape (M, q); qubit 0 is the low bit."""
    M, q = zero_amp.shape
    amps = np.ones((M, 1), dtype=complex)
    for qubit in range(q):
        # the new qubit becomes the most significant bit so far
        amps = np.concatenate([amps * zero_amp[:, qubit:qubit + 1], amps * one_amp[:, qubit:qubit + 1]], 1)
    return amps


def reference_encode(model: ClassifierModel, features) -> qsim.StateVector:
    """Gate-by-gate construction through the public simulator API.

    Slow; kept as an independent check on the batched path.
    """
    cfg = model.config
    q = cfg.num_qubits
    x = model.normalize(np.asarray(features, dtype=float))
    state = qsim.new_state(q)
    theta_it, omega_it = iter(model.thetas), iter(model.omegas)
    chain = [(i, i + 1) for i in range(q - 1)]
    for _ in range(cfg.num_layers):
        for qubit in range(q):
            for k in range(cfg.data_dim):
                t_a, t_b, w = next(theta_it), next(theta_it), next(omega_it)
                qsim.apply_gate(state, qsim.GateOp(qsim.GateKind.RZ, qubit, angle=t_b))
                qsim.apply_gate(state, qsim.GateOp(qsim.GateKind.RX, qubit, angle=w * x[k] + t_a))
        if cfg.entanglement is not Entanglement.NONE:
            for c_q, t_q in chain:
                kind = qsim.GateKind(cfg.entanglement.value)
                angle = next(theta_it) if kind is qsim.GateKind.CRZ else None
                qsim.apply_gate(state, qsim.GateOp(kind, t_q, control=c_q, angle=angle))
    leftover = sum(1 for _ in theta_it) + sum(1 for _ in omega_it)
    if leftover:
        raise InvalidArgument(f"{leftover} parameters were not consumed by the ansatz")
    return state


def encode(model: ClassifierModel, features) -> qsim.StateVector:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise InvalidArgument("encode takes a single feature vector")
    amps = _encode_batch(model, _as_matrix(model, features))[0]
    return qsim.StateVector(model.config.num_qubits, amps)


def fidelity_matrix(model: ClassifierModel, X) -> np.ndarray:
    """Per-sample class fidelities, shape (samples, classes)."""
    probs = np.abs(_encode_batch(model, _as_matrix(model, X))) ** 2
    return probs[:, model.class_basis]


def fidelity_vector(model: ClassifierModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise InvalidArgument("fidelity_vector takes a single feature vector")
    return fidelity_matrix(model, features)[0]


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X, y = dataset
    else:
        dataset = list(dataset)
        X = [s.features for s in dataset]
        y = [s.label for s in dataset]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise InvalidArgument("dataset is empty")
    return np.atleast_2d(X), y


def cost_from_fidelities(F: np.ndarray, alphas: np.ndarray, y: np.ndarray) -> float:
    targets = np.zeros_like(F)
    targets[np.arange(y.size), y] = 1.0
    return 0.5 * float(np.sum((alphas * F - targets) ** 2))


def cost(model: ClassifierModel, dataset) -> float:
    """Weighted-fidelity squared error summed over samples and classes."""
    X, y = _dataset_arrays(dataset)
    if np.any((y < 0) | (y >= model.num_classes)):
        raise InvalidArgument("label outside the model's classes")
    return cost_from_fidelities(fidelity_matrix(model, X), model.alphas, y)


def predict_batch(model: ClassifierModel, X) -> np.ndarray:
    scores = model.alphas * fidelity_matrix(model, X)
    return np.argmax(scores, axis=1)


def predict(model: ClassifierModel, features) -> int:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise InvalidArgument("predict takes a single feature vector")
    return int(predict_batch(model, features)[0])


def accuracy(model: ClassifierModel, X, y) -> float:
    return float(np.mean(predict_batch(model, X) == np.asarray(y)))


def cost_gradient_fd(model: ClassifierModel, X, y, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the mean cost, for an unentangled ansatz.

    Shifting one parameter touches a single block on a single qubit, so the
    state entering every block and the product of the blocks after it are
    cached once; each difference quotient then costs two 2x2 applications
    instead of a full simulation.  The result equals coordinate-wise central
    differences of the mean cost up to rounding.
    """
    cfg = model.config
    if cfg.entanglement is not Entanglement.NONE:
        raise InvalidArgument("cached differences need an unentangled ansatz")
    X, y = _dataset_arrays((X, y))
    Xn = model.normalize(X)
    L, q, d = cfg.num_layers, cfg.num_qubits, cfg.data_dim
    M, N, C = Xn.shape[0], cfg.num_layers * cfg.data_dim, model.num_classes
    targets = np.zeros((M, C))
    targets[np.arange(M), y] = 1.0

    phi, beta = _block_angles(model, Xn)
    phi, beta = phi.reshape(N, M, q), beta.reshape(N, 1, q)
    seq = _block_entries(phi, beta)
    zero, one, in0, in1 = _sweep(seq, keep=True)
    s00, s01, s10, s11 = _suffixes(seq)

    bits = (np.asarray(model.class_basis)[:, None] >> np.arange(q)) & 1  # (C, q)
    p0, p1 = np.abs(zero) ** 2, np.abs(one) ** 2
    per_qubit = np.where(bits[None], p1[:, None, :], p0[:, None, :])  # (M, C, q)
    others = np.ones_like(per_qubit)
    for k in range(q):
        for other in range(q):
            if other != k:
                others[..., k] *= per_qubit[..., other]

    # six shifted copies of every block: t_a +-, omega +-, t_b +-
    xk = np.tile(Xn.T, (L, 1))[:, :, None]  # (N, M, 1)
    h = step
    dphi = np.stack([np.full_like(xk, h), np.full_like(xk, -h), h * xk, -h * xk,
                     np.zeros_like(xk), np.zeros_like(xk)])
    dbeta = np.array([0, 0, 0, 0, h, -h], dtype=float)[:, None, None, None]
    b00, b01, b10, b11 = _block_entries(phi[None] + dphi, beta[None] + dbeta)
    v0 = b00 * in0 + b01 * in1
    v1 = b10 * in0 + b11 * in1
    q0 = np.abs(s00 * v0 + s01 * v1) ** 2
    q1 = np.abs(s10 * v0 + s11 * v1) ** 2  # (6, N, M, q)
    shifted = np.where(bits, q1[..., None, :], q0[..., None, :]) * others  # (6, N, M, C, q)
    resid = model.alphas[:, None] * shifted - targets[..., None]
    costs = 0.5 * np.sum(resid ** 2, axis=(2, 3)) / M  # (6, N, q)
    diff = (costs[0::2] - costs[1::2]) / (2 * h)  # (3, N, q): t_a, omega, t_b
    diff = diff.reshape(3, L, d, q).transpose(0, 1, 3, 2)  # (3, L, q, d)

    grad_t = np.stack([diff[0], diff[2]], axis=-1).reshape(-1)
    grad_w = diff[1].reshape(-1)
    F = np.prod(per_qubit, axis=-1)
    base = model.alphas * F - targets
    grad_a = (np.sum((base + h * F) ** 2, axis=0) - np.sum((base - h * F) ** 2, axis=0)) / (4 * h * M)
    return np.concatenate([grad_t, grad_w, grad_a])


def train(model: ClassifierModel, dataset, optimizer: OptimizerConfig,
          seed: Optional[int] = None, fit_bounds: bool = True) -> tuple[ClassifierModel, list[float]]:
    """Minimize the cost over (thetas, omegas, alphas).

    The optimizer sees the per-sample mean cost so its gains do not depend on
    the dataset size; the returned trace is in units of the full cost.
    ``fit_bounds`` refreshes the stored feature normalization from ``dataset``.
    """
    X, y = _dataset_arrays(dataset)
    if np.any((y < 0) | (y >= model.num_classes)):
        raise InvalidArgument("label outside the model's classes")
    if fit_bounds:
        model = fit_normalization(model, X)
    if seed is not None:
        optimizer = optimizer.with_(seed=seed)
    m = y.size
    targets = np.zeros((m, model.num_classes))
    targets[np.arange(m), y] = 1.0

    def objective(v):
        candidate = model.with_parameters(v)
        F = fidelity_matrix(candidate, X)
        return 0.5 * float(np.sum((candidate.alphas * F - targets) ** 2)) / m

    gradient = None
    if optimizer.kind is OptimizerKind.FD_QUASI_NEWTON and model.config.entanglement is Entanglement.NONE:
        def gradient(v):
            return cost_gradient_fd(model.with_parameters(v), X, y, optimizer.fd_step)

    try:
        result = minimize(objective, model.parameters, optimizer, gradient=gradient)
    except OptimizationFailure as exc:
        raise TrainingFailure(str(exc), [t * m for t in exc.trace]) from exc
    return model.with_parameters(result.x), [t * m for t in result.trace]


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: ClassifierModel) -> dict:
    cfg = model.config
    return {
        "format": "qcbr.classifier",
        "version": FORMAT_VERSION,
        "config": {
            "num_qubits": cfg.num_qubits,
            "num_layers": cfg.num_layers,
            "data_dim": cfg.data_dim,
            "entanglement": cfg.entanglement.value,
        },
        "num_classes": model.num_classes,
        "class_basis": list(model.class_basis),
        "thetas": model.thetas.tolist(),
        "omegas": model.omegas.tolist(),
        "alphas": model.alphas.tolist(),
        "feature_low": None if model.feature_low is None else model.feature_low.tolist(),
        "feature_high": None if model.feature_high is None else model.feature_high.tolist(),
    }


def model_from_dict(doc: dict) -> ClassifierModel:
    if doc.get("format") != "qcbr.classifier":
        raise InvalidArgument("not a classifier document")
    low, high = doc.get("feature_low"), doc.get("feature_high")
    return ClassifierModel(
        config=AnsatzConfig(**doc["config"]),
        thetas=np.array(doc["thetas"], dtype=float),
        omegas=np.array(doc["omegas"], dtype=float),
        alphas=np.array(doc["alphas"], dtype=float),
        num_classes=int(doc["num_classes"]),
        class_basis=doc["class_basis"],
        feature_low=None if low is None else np.array(low, dtype=float),
        feature_high=None if high is None else np.array(high, dtype=float),
    )


def dumps(model: ClassifierModel) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(model_to_dict(model), indent=2)


def loads(text: str) -> ClassifierModel:
    return model_from_dict(json.loads(text))
