"""Normalized feature space assembly, correlation, PCA reduction, projection.

Also owns the on-disk "features artifact": the output directory of the
`characterize` command, holding the normalized feature matrix (float64, so
later selection is bit-exact with the in-memory pipeline), the raw measure
matrix (float32), resolved labels, and per-epoch correctness.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import (
    CoordShapeMismatch,
    IoFailure,
    ManifestError,
    MissingFile,
    UnknownMeasure,
)
from .measures import MeasureMatrix, MeasureSpec, measure_spec

SIDECAR_NAME = "features.json"
ARTIFACT_VERSION = 1
STD_FLOOR = 1e-12


@dataclass
class FeatureMatrix:
    """Column-wise z-scored measure values plus the statistics to undo it.

    Constant input columns (population std below 1e-12) become all-zero and
    are flagged rather than divided through.
    """

    values: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    source_specs: list
    constant_flags: np.ndarray

    @property
    def names(self):
        return [s.name for s in self.source_specs]

    def column_index(self, name):
        names = self.names
        if name not in names:
            raise UnknownMeasure(name)
        return names.index(name)


@dataclass
class CorrelationMatrix:
    """Pearson correlations between measure columns."""

    values: np.ndarray
    names: list
    constant_flags: np.ndarray


def _zscore(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    const = sd < STD_FLOOR
    z = (x - mu) / np.where(const, 1.0, sd)
    z[:, const] = 0.0
    return z, mu, sd, const


def normalize(m):
    """Per-column z-score of a MeasureMatrix (population std)."""
    x = np.asarray(m.values, dtype=np.float64)
    z, mu, sd, const = _zscore(x)
    return FeatureMatrix(
        values=z,
        means=mu,
        stds=sd,
        source_specs=list(m.column_specs),
        constant_flags=const,
    )


def correlation(m):
    """Pearson correlation of all column pairs of a MeasureMatrix.

    Pairs involving a constant column are 0 and the column is flagged.
    """
    x = np.asarray(m.values, dtype=np.float64)
    n = x.shape[0]
    z, _, _, const = _zscore(x)
    r = z.T @ z / n
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    r[const, :] = 0.0
    r[:, const] = 0.0
    keep = ~const
    r[keep & keep[:, None] & np.eye(r.shape[0], dtype=bool)] = 1.0
    names = [s.name for s in m.column_specs]
    return CorrelationMatrix(values=r, names=names, constant_flags=const)


def _signed_eigh(sym):
    # ascending eigenvalues from eigh, flipped to descending; each vector's
    # largest-magnitude entry is made positive for a deterministic sign
    w, v = np.linalg.eigh(sym)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return w, v


def pca_feature_select(f, keep):
    """Reduce to `keep` original columns by principal-component loadings.

    Walks the top-`keep` components of the column correlation matrix in
    descending eigenvalue order, each time taking the not-yet-chosen column
    with the largest absolute loading.  Output columns keep their original
    values (no linear mixing), ordered by pick.
    """
    x = f.values
    n_features = x.shape[1]
    if not 1 <= keep <= n_features:
        raise ValueError(f"keep must be in [1, {n_features}], got {keep}")
    shim = MeasureMatrix(
        values=x, column_specs=list(f.source_specs), label_source="gold"
    )
    corr = correlation(shim)
    _, vectors = _signed_eigh(corr.values)
    chosen = []
    for j in range(keep):
        loadings = np.abs(vectors[:, j])
        loadings[chosen] = -1.0
        chosen.append(int(np.argmax(loadings)))
    return FeatureMatrix(
        values=x[:, chosen],
        means=f.means[chosen],
        stds=f.stds[chosen],
        source_specs=[f.source_specs[i] for i in chosen],
        constant_flags=f.constant_flags[chosen],
    )


def project2d(f, coords=None):
    """2-D coordinates for plotting: external ones verbatim, else PCA."""
    n = f.values.shape[0]
    if coords is not None:
        c = np.asarray(coords, dtype=np.float64)
        if c.shape != (n, 2):
            raise CoordShapeMismatch(
                f"expected coordinates [{n} x 2], got {list(c.shape)}"
            )
        return c
    x = f.values - f.values.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    take = min(2, vt.shape[0])
    basis = vt[:take].copy()
    for j in range(take):
        i = int(np.argmax(np.abs(basis[j])))
        if basis[j, i] < 0:
            basis[j] = -basis[j]
    proj = x @ basis.T
    if take < 2:
        proj = np.hstack([proj, np.zeros((n, 2 - take))])
    return proj


def feature_csv(f, path):
    """Write normalized feature values as CSV with measure-name header."""
    _matrix_csv(f.values, f.names, path)


def correlation_csv(c, path):
    """Write a correlation matrix as CSV, row and column labelled."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["measure"] + c.names) + "\n")
        for name, row in zip(c.names, c.values):
            fh.write(",".join([name] + [repr(float(v)) for v in row]) + "\n")


def _matrix_csv(values, names, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["index"] + list(names)) + "\n")
        for i, row in enumerate(values):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")


def export_matrix_f32(values, names, dir_path, stem):
    """Raw-f32 export of any [N x F] matrix with a JSON sidecar."""
    os.makedirs(dir_path, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype=np.float32)
    fname = f"{stem}.f32"
    tensorio.write_tensor(os.path.join(dir_path, fname), arr)
    sidecar = {
        "names": list(names),
        "tensor": tensorio.tensor_entry(stem, fname, arr),
    }
    with open(os.path.join(dir_path, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


@dataclass
class FeaturesArtifact:
    """Everything the select/report commands need, as loaded from disk."""

    features: FeatureMatrix
    measures: MeasureMatrix
    labels: np.ndarray
    correctness: np.ndarray
    knn_k: int
    label_source: str
    skipped: list


def write_features(dir_path, measures, features, labels, correctness, knn_k):
    """Write the characterize output directory.

    The normalized matrix is stored as float64 so a later `select` run is
    bit-for-bit identical to selecting on the in-memory FeatureMatrix; the
    raw measures are stored as float32 for analysis and reporting.
    """
    try:
        os.makedirs(dir_path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {dir_path}: {exc}") from exc

    payloads = {
        "features": np.ascontiguousarray(features.values, dtype=np.float64),
        "measures": np.ascontiguousarray(measures.values, dtype=np.float32),
        "labels": np.ascontiguousarray(labels, dtype=np.int32),
        "correctness": np.ascontiguousarray(correctness, dtype=np.float32),
    }
    entries = []
    for name, arr in payloads.items():
        fname = f"{name}.{tensorio.dtype_tag(arr)}"
        tensorio.write_tensor(os.path.join(dir_path, fname), arr)
        entries.append(tensorio.tensor_entry(name, fname, arr))

    columns = []
    for j, spec in enumerate(features.source_specs):
        columns.append(
            {
                "name": spec.name,
                "category": spec.category,
                "mean": float(features.means[j]),
                "std": float(features.stds[j]),
                "constant": bool(features.constant_flags[j]),
            }
        )
    sidecar = {
        "version": ARTIFACT_VERSION,
        "n_samples": int(features.values.shape[0]),
        "n_features": int(features.values.shape[1]),
        "knn_k": int(knn_k),
        "label_source": measures.label_source,
        "columns": columns,
        "skipped": [
            {"measure": name, "missing_input": missing}
            for name, missing in measures.skipped
        ],
        "tensors": entries,
    }
    with open(os.path.join(dir_path, SIDECAR_NAME), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_features(dir_path):
    """Load a characterize output directory back into memory."""
    spath = os.path.join(dir_path, SIDECAR_NAME)
    if not os.path.isfile(spath):
        raise MissingFile(f"no {SIDECAR_NAME} in {dir_path}")
    try:
        with open(spath, encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse {spath}: {exc}") from exc
    for key in ("version", "n_samples", "n_features", "knn_k", "label_source",
                "columns", "skipped", "tensors"):
        if key not in sidecar:
            raise ManifestError(f"features sidecar missing key {key!r}")
    if sidecar["version"] != ARTIFACT_VERSION:
        raise ManifestError(f"unsupported artifact version {sidecar['version']!r}")

    arrays = {}
    for entry in sidecar["tensors"]:
        arrays[entry["name"]] = tensorio.read_tensor(
            os.path.join(dir_path, entry["path"]), entry["shape"], entry["dtype"]
        )
    for required in ("features", "measures", "labels", "correctness"):
        if required not in arrays:
            raise ManifestError(f"features sidecar lacks tensor {required!r}")

    specs = []
    means = []
    stds = []
    consts = []
    for col in sidecar["columns"]:
        specs.append(
            MeasureSpec(
                name=col["name"],
                category=col["category"],
                required_inputs=measure_spec(col["name"]).required_inputs,
            )
        )
        means.append(col["mean"])
        stds.append(col["std"])
        consts.append(col["constant"])

    features = FeatureMatrix(
        values=arrays["features"],
        means=np.asarray(means, dtype=np.float64),
        stds=np.asarray(stds, dtype=np.float64),
        source_specs=specs,
        constant_flags=np.asarray(consts, dtype=bool),
    )
    measures = MeasureMatrix(
        values=arrays["measures"].astype(np.float64),
        column_specs=list(specs),
        label_source=sidecar["label_source"],
        skipped=[(s["measure"], s["missing_input"]) for s in sidecar["skipped"]],
    )
    return FeaturesArtifact(
        features=features,
        measures=measures,
        labels=arrays["labels"].astype(np.int64),
        correctness=arrays["correctness"].astype(np.float64),
        knn_k=int(sidecar["knn_k"]),
        label_source=sidecar["label_source"],
        skipped=measures.skipped,
    )
