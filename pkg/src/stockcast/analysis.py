"""Embedding analysis: PCA with explained variance, cosine nearest neighbors.

Operates on trained checkpoints. The eigensolver is a cyclic Jacobi iteration
on the symmetric covariance, which is ample for embedding widths up to 50.
"""

import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint
from .data import UNK_LABEL
from .tensor import ContractError

_EMB_PREFIX = "encoder.emb_"


class AnalysisError(ValueError):
    """Raised for degenerate inputs (zero vectors, bad k, rank issues)."""


class EmbeddingLookupError(LookupError):
    """Raised when a checkpoint holds no embedding for the requested feature."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    feature: str
    labels: Tuple[str, ...]
    vectors: np.ndarray  # (|C|, D)

    def __post_init__(self):
        if len(self.labels) != self.vectors.shape[0]:
            raise AnalysisError(f"{len(self.labels)} labels for "
                                f"{self.vectors.shape[0]} embedding rows")
        if len(set(self.labels)) != len(self.labels):
            raise AnalysisError("embedding labels must be unique")


@dataclass(frozen=True)
class PCAResult:
    components: np.ndarray  # (D, D) rows sorted by descending eigenvalue
    explained_variance_ratio: np.ndarray  # (D,)
    projections: np.ndarray  # (|C|, D)
    eigenvalues: np.ndarray  # (D,)


def available_embeddings(ck: Checkpoint) -> List[str]:
    names = []
    for key in ck.arrays:
        if key.startswith(_EMB_PREFIX) and key.endswith(".weight"):
            names.append(key[len(_EMB_PREFIX):-len(".weight")])
    return sorted(names)


def extract_embeddings(ck: Checkpoint, feature_name: str) -> EmbeddingMatrix:
    """Embedding rows for one categorical feature, labeled in vocabulary order."""
    key = f"{_EMB_PREFIX}{feature_name}.weight"
    if key not in ck.arrays:
        have = available_embeddings(ck)
        raise EmbeddingLookupError(
            f"no embedding for feature {feature_name!r} in this checkpoint; "
            f"available: {have if have else 'none (model has no embedding layers)'}")
    vectors = np.asarray(ck.arrays[key], dtype=np.float64)
    if ck.vocab and feature_name in ck.vocab:
        labels = tuple(ck.vocab[feature_name]) + (UNK_LABEL,)
    else:
        labels = tuple(f"{feature_name}[{i}]" for i in range(vectors.shape[0]))
    if len(labels) != vectors.shape[0]:
        raise AnalysisError(
            f"vocabulary for {feature_name!r} has {len(labels)} labels but the "
            f"embedding has {vectors.shape[0]} rows")
    return EmbeddingMatrix(feature_name, labels, vectors)


def _jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unordered. Convergence target: off-diagonal Frobenius norm below `tol`
    relative to the matrix scale.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[p].copy(), a[q].copy()
                a[p] = c * rot_p - s * rot_q
                a[q] = s * rot_p + c * rot_q
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    return np.diag(a).copy(), v


def pca(em: EmbeddingMatrix) -> PCAResult:
    """Principal components of the embedding rows.

    Columns are centered; the sample covariance uses divisor |C| - 1. Each
    component's largest-magnitude entry is flipped positive so outputs are
    reproducible across runs.
    """
    n, d = em.vectors.shape
    if n < 2:
        raise ContractError(f"PCA needs at least 2 rows, got {n}")
    centered = em.vectors - em.vectors.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = _jacobi_eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order].T.copy()
    for i in range(d):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    trace = float(np.trace(cov))
    if trace <= 1e-30:
        raise AnalysisError("embedding rows are identical; covariance has zero trace")
    ratios = eigvals / trace
    return PCAResult(components=components,
                     explained_variance_ratio=ratios,
                     projections=centered @ components.T,
                     eigenvalues=eigvals)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise AnalysisError("cosine distance undefined for a zero-norm vector")
    if np.array_equal(u, v):
        return 0.0
    cos = float(np.dot(u, v)) / (nu * nv)
    return 1.0 - min(1.0, max(-1.0, cos))


def nearest_neighbors(em: EmbeddingMatrix, label: str, k: int) -> List[Tuple[str, float]]:
    """k nearest labels by cosine distance, ascending, ties by label order."""
    if label not in em.labels:
        raise EmbeddingLookupError(
            f"label {label!r} not found for feature {em.feature!r}")
    if not 1 <= k < len(em.labels):
        raise AnalysisError(
            f"k must satisfy 1 <= k < {len(em.labels)}, got {k}")
    idx = em.labels.index(label)
    query = em.vectors[idx]
    norms = np.linalg.norm(em.vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise AnalysisError(
            f"zero-norm embedding vector for label {em.labels[int(zero[0])]!r}")
    scored = []
    for i, other in enumerate(em.labels):
        if i == idx:
            continue
        scored.append((other, cosine_distance(query, em.vectors[i])))
    scored.sort(key=lambda pair: (pair[1], pair[0]))
    return scored[:k]


def format_neighbors(label: str, neighbors: Sequence[Tuple[str, float]]) -> str:
    entries = ", ".join(f"{name} ({dist:.5f})" for name, dist in neighbors)
    return f"{label}: {entries}"


def export_report(em: EmbeddingMatrix, result: PCAResult, out_dir,
                  groups: Optional[Dict[str, str]] = None,
                  neighbor_rows: Optional[Iterable[Tuple[str, int, str, float]]] = None,
                  ) -> Dict[str, str]:
    """Write projections.csv, variance.csv and neighbors.csv under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    d = result.components.shape[0]
    paths = {}

    proj_path = os.path.join(out_dir, "projections.csv")
    lines = ["label,group," + ",".join(f"pc{i + 1}" for i in range(d))]
    for row, label in enumerate(em.labels):
        grp = groups.get(label, "") if groups else ""
        coords = ",".join(repr(float(x)) for x in result.projections[row])
        lines.append(f"{label},{grp},{coords}")
    _write_lines(proj_path, lines)
    paths["projections"] = proj_path

    var_path = os.path.join(out_dir, "variance.csv")
    lines = ["component,ratio,cumulative"]
    cum = 0.0
    for i, ratio in enumerate(result.explained_variance_ratio):
        cum += float(ratio)
        lines.append(f"{i + 1},{repr(float(ratio))},{repr(cum)}")
    _write_lines(var_path, lines)
    paths["variance"] = var_path

    nn_path = os.path.join(out_dir, "neighbors.csv")
    lines = ["label,rank,neighbor,cosine_distance"]
    for label, rank, neighbor, dist in (neighbor_rows or ()):
        lines.append(f"{label},{rank},{neighbor},{repr(float(dist))}")
    _write_lines(nn_path, lines)
    paths["neighbors"] = nn_path
    return paths


def all_neighbor_rows(em: EmbeddingMatrix, k: int):
    """(label, rank, neighbor, distance) rows for every label's top-k list."""
    rows = []
    for label in em.labels:
        for rank, (other, dist) in enumerate(nearest_neighbors(em, label, k), start=1):
            rows.append((label, rank, other, dist))
    return rows


def _write_lines(path, lines):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise AnalysisError(f"cannot write report to {path}: {exc}") from exc
