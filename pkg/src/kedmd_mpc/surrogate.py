"""Two-step kernel EDMD surrogate of a control-affine system.

Step 1 estimates ``H_i = [g0(x_i) | G(x_i)]`` at every virtual observation
point by least squares on the cluster data.  Step 2 propagates the kernel
interpolants ``s_l`` of the coordinate functions through the estimated maps
and interpolates the result again:

    coeff_j = (K_X + reg I)^-1 V_j,   (V_j)_{i,l} = s_l(g~_j(x_i)),

so that ``f_eps(x, u) = k_X(x)^T (coeff_0 + sum_j u_j coeff_j)``.  In the
physics-informed variant ``g~_0(0) = 0`` is imposed, and since ``s_l`` is
exact at the origin node the surrogate reproduces ``f(0, 0) = 0``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ExcitationError
from .kernel import FactorizedKernelMatrix, KernelSpec, kernel_matrix
from .sampling import Cluster, ClusterDataset, excitation_diagnostics

MODEL_MAGIC = b"KEDMD\x00"
MODEL_VERSION = 1
REG_SIZE_THRESHOLD = 1500
REG_RELATIVE = 1e-10


def local_regression(c: Cluster, return_residual: bool = False):
    """Least-squares estimate of ``[g0(x_i) | G(x_i)]`` (shape ``n x (m+1)``)."""
    U = c.U
    rank = excitation_diagnostics(c)[0]
    if rank < U.shape[0]:
        raise ExcitationError(f"U_i has rank {rank} < {U.shape[0]} at center {c.center}")
    Ht, *_ = np.linalg.lstsq(U.T, c.successors, rcond=None)
    H = Ht.T
    if return_residual:
        return H, float(np.linalg.norm(c.successors.T - H @ U))
    return H


def local_regression_pi(origin_cluster: Cluster, return_residual: bool = False):
    """Reduced regression at the origin: drift fixed to zero, only ``G(0)`` is fitted."""
    u = origin_cluster.inputs
    m = u.shape[1]
    if np.linalg.matrix_rank(u) < m:
        raise ExcitationError("origin-cluster inputs do not span the input space")
    Gt, *_ = np.linalg.lstsq(u, origin_cluster.successors, rcond=None)
    H = np.zeros((origin_cluster.states.shape[1], m + 1))
    H[:, 1:] = Gt.T
    if return_residual:
        return H, float(np.linalg.norm(origin_cluster.successors.T - Gt.T @ u.T))
    return H


def default_regularization(kernel: KernelSpec, d: int) -> float:
    return 0.0 if d <= REG_SIZE_THRESHOLD else REG_RELATIVE * kernel.phi0


@dataclass
class SurrogateModel:
    """Fitted kernel surrogate; ``coeff`` has shape ``(m + 1, d, n)``.

    ``coeff[0]`` interpolates the drift, ``coeff[j]`` the ``j``-th input column.
    An autonomous model (flow regression) has ``m = 0``.
    """

    kernel: KernelSpec
    K: FactorizedKernelMatrix
    coeff: np.ndarray
    pi_variant: bool
    metadata: dict = field(default_factory=dict)
    local_maps: np.ndarray | None = None
    step1_residuals: np.ndarray | None = None

    @property
    def centers(self) -> np.ndarray:
        return self.K.centers

    @property
    def state_dim(self) -> int:
        return self.coeff.shape[2]

    @property
    def input_dim(self) -> int:
        return self.coeff.shape[0] - 1

    n = state_dim
    m = input_dim

    def features(self, x) -> np.ndarray:
        return self.kernel.block(np.atleast_2d(x), self.centers)

    def maps(self, x) -> np.ndarray:
        """``[g0_eps(x) | G_eps(x)]`` as an ``n x (m+1)`` array (batched: ``(..., n, m+1)``)."""
        x = np.asarray(x, dtype=float)
        feats = self.features(x.reshape(-1, self.state_dim))
        W = np.einsum("bd,jdn->bnj", feats, self.coeff)
        return W.reshape(x.shape[:-1] + W.shape[1:])

    def predict(self, x, u=None) -> np.ndarray:
        W = self.maps(x)
        out = W[..., 0]
        if self.input_dim:
            out = out + np.einsum("...nj,...j->...n", W[..., 1:], np.asarray(u, dtype=float))
        return out

    __call__ = predict

    def linearize(self, x, u):
        """Successor plus Jacobians in ``x`` (``n x n``) and ``u`` (``n x m``)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        feats, grads = self.kernel.features_and_gradients(x, self.centers)
        W = np.einsum("d,jdn->nj", feats, self.coeff)
        weights = np.concatenate([[1.0], u]) if self.input_dim else np.ones(1)
        C = np.tensordot(weights, self.coeff, axes=1)  # d x n
        x_next = W[:, 0] + W[:, 1:] @ u if self.input_dim else W[:, 0]
        return x_next, C.T @ grads, W[:, 1:]

    def origin_residual(self) -> float:
        return float(np.linalg.norm(self.predict(np.zeros(self.state_dim), np.zeros(self.input_dim))))


def eval_surrogate(model: SurrogateModel, x, u) -> np.ndarray:
    return model.predict(x, u)


def surrogate_jacobians(model: SurrogateModel, x, u):
    """``(J_x, J_u)`` of the surrogate at ``(x, u)``."""
    _, Jx, Ju = model.linearize(x, u)
    return Jx, Ju


def fit_surrogate(ds: ClusterDataset, kernel: KernelSpec, pi: bool, reg: float | None = None) -> SurrogateModel:
    """Fit the surrogate from clustered data; ``reg=None`` selects the size-based default."""
    centers = ds.centers
    d, n = centers.shape
    if n != kernel.dim:
        raise DataError(f"kernel dimension {kernel.dim} does not match state dimension {n}")
    if reg is None:
        reg = default_regularization(kernel, d)
    if reg != kernel.reg:
        kernel = KernelSpec(kernel.dim, kernel.smoothness, kernel.scale, reg)
    H = np.empty((d, n, ds.input_dim + 1))
    residuals = np.empty(d)
    for i, c in enumerate(ds.clusters):
        if pi and i == 0:
            H[i], residuals[i] = local_regression_pi(c, return_residual=True)
        else:
            H[i], residuals[i] = local_regression(c, return_residual=True)
    K = kernel_matrix(kernel, centers)
    coord = K.solve(centers)  # interpolation coefficients of the coordinate maps
    coeff = np.empty((ds.input_dim + 1, d, n))
    for j in range(ds.input_dim + 1):
        values = kernel.block(H[:, :, j], centers) @ coord
        coeff[j] = K.solve(values)
    meta = {
        "r_X": ds.r_X,
        "seed": ds.rng_seed,
        "source": ds.source,
        "samples": ds.total_samples,
        "condition_estimate": K.condition_estimate,
    }
    return SurrogateModel(kernel, K, coeff, bool(pi), meta, H, residuals)


def fit_flow_regression(X, X_plus, kernel: KernelSpec) -> SurrogateModel:
    """Autonomous surrogate interpolating samples ``F(x_i)`` of a flow map directly."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X_plus = np.asarray(X_plus, dtype=float).reshape(X.shape)
    K = kernel_matrix(kernel, X)
    coeff = K.solve(X_plus)[None, :, :]
    return SurrogateModel(kernel, K, coeff, False, {"kind": "flow_regression"})


# --- model files ---------------------------------------------------------------


def _model_blob(model: SurrogateModel) -> bytes:
    centers = np.asfortranarray(model.centers, dtype="<f8")
    coeff = np.asfortranarray(model.coeff, dtype="<f8")
    return centers.tobytes(order="F") + coeff.tobytes(order="F")


def save_model(model: SurrogateModel, path) -> Path:
    """Write a ``.kedmd`` file: magic, header length, JSON header, float64 blob."""
    path = Path(path)
    blob = _model_blob(model)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "kedmd",
        "version": MODEL_VERSION,
        "kernel": model.kernel.to_dict(),
        "pi_variant": model.pi_variant,
        "centers_shape": list(model.centers.shape),
        "coeff_shape": list(model.coeff.shape),
        "order": "F",
        "dtype": "<f8",
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "metadata": model.metadata,
    }
    head = json.dumps(header, sort_keys=True, default=_json_default).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(blob)
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_model(path) -> SurrogateModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise DataError(f"{path}: not a .kedmd model file")
    off = len(MODEL_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off : off + 8])
    header = json.loads(raw[off + 8 : off + 8 + hlen])
    if header.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {header.get('version')}")
    blob = raw[off + 8 + hlen :]
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise DataError(f"{path}: coefficient blob hash mismatch")
    cs, ks = header["centers_shape"], header["coeff_shape"]
    nc = int(np.prod(cs))
    arr = np.frombuffer(blob, dtype="<f8")
    centers = arr[:nc].reshape(cs, order="F").astype(float)
    coeff = arr[nc:].reshape(ks, order="F").astype(float)
    kernel = KernelSpec.from_dict(header["kernel"])
    K = kernel_matrix(kernel, centers)
    return SurrogateModel(kernel, K, np.ascontiguousarray(coeff), header["pi_variant"], header["metadata"])
