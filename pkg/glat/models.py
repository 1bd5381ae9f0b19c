"""Pydantic models for data structures."""

import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

CLASS_NAMES = ("normal", "grade 3", "grade 4", "grade 5")
NUM_CLASSES = len(CLASS_NAMES)


def frozen_array(value, ndim: Optional[int] = None) -> np.ndarray:
    """Copy ``value`` into a read-only float64 array."""
    arr = np.array(value, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"Expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class ArrayModel(BaseModel):
    """Base for immutable models holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# --- Patch data -----------------------------------------------------------


class PatchRecord(BaseModel):
    """One patch: id, grid coordinates (patch units) and embedding."""

    model_config = ConfigDict(frozen=True)

    id: NonNegativeInt
    x: NonNegativeInt
    y: NonNegativeInt
    embedding: Tuple[float, ...]

    @field_validator("embedding")
    @classmethod
    def _finite(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("embedding entries must be finite")
        return value


class EmbeddingTable(BaseModel):
    """All patch embeddings of one slide, sorted by id."""

    model_config = ConfigDict(frozen=True)

    d: PositiveInt
    slide_id: str = Field(default="slide", pattern=r"^\S+$")
    patch_px: PositiveInt = 224
    records: Tuple[PatchRecord, ...] = ()

    @field_validator("records")
    @classmethod
    def _sort(cls, value: Tuple[PatchRecord, ...]) -> Tuple[PatchRecord, ...]:
        return tuple(sorted(value, key=lambda r: r.id))

    @model_validator(mode="after")
    def _check(self) -> "EmbeddingTable":
        previous = None
        for record in self.records:
            if record.id == previous:
                raise ValueError(f"duplicate id {record.id}")
            previous = record.id
            if len(record.embedding) != self.d:
                raise ValueError(
                    f"record {record.id} has {len(record.embedding)} values, expected d={self.d}"
                )
        return self

    @classmethod
    def from_arrays(
        cls,
        ids,
        coords,
        embeddings,
        slide_id: str = "slide",
        patch_px: int = 224,
    ) -> "EmbeddingTable":
        """Build a table from parallel id / (x, y) / embedding arrays."""
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2:
            raise ValueError(f"Expected an N x d embedding matrix, got shape {embeddings.shape}")
        records = tuple(
            PatchRecord(
                id=int(i),
                x=int(xy[0]),
                y=int(xy[1]),
                embedding=tuple(float(v) for v in row),
            )
            for i, xy, row in zip(ids, coords, embeddings)
        )
        return cls(d=embeddings.shape[1], slide_id=slide_id, patch_px=patch_px, records=records)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> List[int]:
        return [r.id for r in self.records]

    def coords(self) -> np.ndarray:
        """N x 2 integer array of (x, y)."""
        return np.array([(r.x, r.y) for r in self.records], dtype=np.int64).reshape(-1, 2)

    def embeddings(self) -> np.ndarray:
        """N x d float64 matrix, rows in id order."""
        return np.array([r.embedding for r in self.records], dtype=np.float64).reshape(-1, self.d)

    def subset(self, ids) -> "EmbeddingTable":
        """Table restricted to ``ids`` (kept in id order)."""
        wanted = set(int(i) for i in ids)
        missing = wanted - set(self.ids())
        if missing:
            raise KeyError(f"Unknown patch ids: {sorted(missing)}")
        return self.model_copy(
            update={"records": tuple(r for r in self.records if r.id in wanted)}
        )

    def with_embeddings(self, embeddings: np.ndarray) -> "EmbeddingTable":
        """Same ids and coordinates, new embedding rows (dimension may change)."""
        return EmbeddingTable.from_arrays(
            self.ids(),
            self.coords(),
            embeddings,
            slide_id=self.slide_id,
            patch_px=self.patch_px,
        )


class GradeLabel(BaseModel):
    """Slide grade: 0 normal (ISUP 1-2), 1 grade 3, 2 grade 4, 3 grade 5."""

    model_config = ConfigDict(frozen=True)

    class_index: int = Field(ge=0, le=NUM_CLASSES - 1)

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.class_index]


class WSIBag(BaseModel):
    """One labeled training sample: the selected patches of a slide."""

    model_config = ConfigDict(frozen=True)

    slide_id: str
    label: GradeLabel
    patches: EmbeddingTable

    @model_validator(mode="after")
    def _non_empty(self) -> "WSIBag":
        if len(self.patches) == 0:
            raise ValueError(f"bag {self.slide_id} has no patches")
        return self


class GridReport(BaseModel):
    """Geometry of a patch grid."""

    width: int
    height: int
    coverage: float = Field(ge=0.0, le=1.0)


# --- Feature providers ----------------------------------------------------


class FeatureProviderSpec(BaseModel):
    """Stand-in for the pretrained local feature extractor."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["passthrough", "random-projection"] = "passthrough"
    seed: int = 0
    out_dim: PositiveInt = 32


class FrozenProjections(ArrayModel):
    """Fixed W_Q, W_K, W_V of the frozen scorer. Never optimized."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    seed: int
    d_k: PositiveInt
    d_v: PositiveInt

    @field_validator("w_q", "w_k", "w_v", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self) -> "FrozenProjections":
        d = self.w_q.shape[0]
        if self.w_q.shape != (d, self.d_k) or self.w_k.shape != (d, self.d_k):
            raise ValueError("W_Q and W_K must both be d x d_k")
        if self.w_v.shape != (d, self.d_v):
            raise ValueError("W_V must be d x d_v")
        for name in ("w_q", "w_k", "w_v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        return self

    @property
    def d(self) -> int:
        return self.w_q.shape[0]


# --- Iterative selection --------------------------------------------------


class AttentionMap(ArrayModel):
    """Row-stochastic P x P attention over a pool of patch ids."""

    matrix: np.ndarray
    pool_ids: Tuple[int, ...]

    @field_validator("matrix", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self) -> "AttentionMap":
        p = len(self.pool_ids)
        if self.matrix.shape != (p, p):
            raise ValueError(f"attention shape {self.matrix.shape} does not match pool of {p}")
        return self


class IrmIteration(ArrayModel):
    """Trace of one refinement iteration."""

    t: int
    pool_ids: Tuple[int, ...]
    scores: Tuple[float, ...]
    selected_ids: Tuple[int, ...]
    refined: np.ndarray

    @field_validator("refined", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)


class SelectionState(BaseModel):
    """Selected ids after iteration ``t`` of ``T``."""

    model_config = ConfigDict(frozen=True)

    t: NonNegativeInt
    selected_ids: Tuple[int, ...]
    scores: Tuple[float, ...]
    m: PositiveInt
    t_total: PositiveInt

    @model_validator(mode="after")
    def _check(self) -> "SelectionState":
        if len(self.selected_ids) > self.m:
            raise ValueError("more than M ids selected")
        if any(a >= b for a, b in zip(self.selected_ids, self.selected_ids[1:])):
            raise ValueError("selected ids must be strictly increasing")
        if self.t > self.t_total:
            raise ValueError("t exceeds T")
        if len(self.scores) != len(self.selected_ids):
            raise ValueError("one score per selected id")
        return self


class IrmResult(BaseModel):
    """Final selection plus the per-iteration trace."""

    model_config = ConfigDict(frozen=True)

    state: SelectionState
    trace: Tuple[IrmIteration, ...]


# --- Graph ----------------------------------------------------------------


class LaplacianBundle(ArrayModel):
    """Adjacency W, degree D and Laplacian L = D - W over ordered nodes."""

    w: np.ndarray
    deg: np.ndarray
    lap: np.ndarray
    sigma: PositiveFloat
    node_ids: Tuple[int, ...]

    @field_validator("w", "deg", "lap", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)

    @property
    def size(self) -> int:
        return len(self.node_ids)


class FilterParams(ArrayModel):
    """Coefficients c_0..c_K of the polynomial filter L_theta."""

    coeffs: np.ndarray

    @field_validator("coeffs", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        arr = frozen_array(value, ndim=1)
        if arr.size == 0:
            raise ValueError("filter needs at least c_0")
        if not np.all(np.isfinite(arr)):
            raise ValueError("filter coefficients must be finite")
        return arr

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @classmethod
    def identity(cls, order: int = 2) -> "FilterParams":
        coeffs = np.zeros(order + 1)
        coeffs[0] = 1.0
        return cls(coeffs=coeffs)


# --- Model ----------------------------------------------------------------

GraphBias = Literal["laplacian", "negative-laplacian", "adjacency"]


class GlatLayerParams(ArrayModel):
    """Trainable GLA projections, filter and fixed bias hyperparameters."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    filter: FilterParams
    lambda_: float = Field(default=0.1, ge=0.0)
    graph_bias: GraphBias = "laplacian"
    heads: PositiveInt = 1

    @field_validator("wq", "wk", "wv", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self) -> "GlatLayerParams":
        d, d_k = self.wq.shape
        if self.wk.shape != (d, d_k) or self.wv.shape[0] != d:
            raise ValueError("Wq, Wk must be d x d_k and Wv d x d_v")
        if d_k % self.heads or self.wv.shape[1] % self.heads:
            raise ValueError(f"d_k={d_k} and d_v={self.wv.shape[1]} must divide by heads={self.heads}")
        return self

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def d_k(self) -> int:
        return self.wq.shape[1]

    @property
    def d_v(self) -> int:
        return self.wv.shape[1]


# Names under which trainable arrays are exposed to optimizers and checkpoints.
PARAM_NAMES = ("glat.wq", "glat.wk", "glat.wv", "glat.filter", "agg_logits", "cls_w", "cls_b")


class ModelParams(ArrayModel):
    """All trainable parameters plus the forward-pass switches they were trained with."""

    glat: GlatLayerParams
    agg_logits: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray
    attention: Literal["gla", "msa"] = "gla"
    aggregation: Literal["convex", "mean"] = "convex"

    @field_validator("agg_logits", "cls_b", mode="before")
    @classmethod
    def _freeze_vec(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=1)

    @field_validator("cls_w", mode="before")
    @classmethod
    def _freeze_mat(cls, value) -> np.ndarray:
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self) -> "ModelParams":
        if self.cls_w.shape != (self.cls_b.size, self.glat.d_v):
            raise ValueError(f"cls_w must be C x d_v, got {self.cls_w.shape}")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} has non-finite entries")
        return self

    @property
    def m_max(self) -> int:
        return self.agg_logits.size

    def arrays(self) -> Dict[str, np.ndarray]:
        """Trainable arrays keyed by :data:`PARAM_NAMES`."""
        return {
            "glat.wq": self.glat.wq,
            "glat.wk": self.glat.wk,
            "glat.wv": self.glat.wv,
            "glat.filter": self.glat.filter.coeffs,
            "agg_logits": self.agg_logits,
            "cls_w": self.cls_w,
            "cls_b": self.cls_b,
        }

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        """Copy with the given trainable arrays replaced."""
        current = self.arrays()
        current.update(arrays)
        glat = self.glat.model_copy(
            update={
                "wq": frozen_array(current["glat.wq"]),
                "wk": frozen_array(current["glat.wk"]),
                "wv": frozen_array(current["glat.wv"]),
                "filter": FilterParams(coeffs=current["glat.filter"]),
            }
        )
        return ModelParams(
            glat=glat,
            agg_logits=current["agg_logits"],
            cls_w=current["cls_w"],
            cls_b=current["cls_b"],
            attention=self.attention,
            aggregation=self.aggregation,
        )


class TrainConfig(BaseModel):
    """Optimizer and training loop settings."""

    model_config = ConfigDict(frozen=True)

    lr: PositiveFloat = 1e-4
    weight_decay: float = Field(default=1e-5, ge=0.0)
    batch_size: PositiveInt = 16
    max_epochs: PositiveInt = 100
    patience: PositiveInt = 10
    alpha: float = Field(default=0.01, ge=0.0)
    seed: int = 0
    fd_check: bool = False
    kappa_weighting: Literal["none", "quadratic"] = "none"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class MetricsReport(BaseModel):
    """Slide-level classification metrics."""

    auc: float = Field(ge=0.0, le=1.0)
    kappa: float = Field(ge=-1.0, le=1.0)
    accuracy: float = Field(ge=0.0, le=1.0)
    per_class_counts: List[int]
    confusion: List[List[int]]
    kappa_degenerate: bool = False


class EpochRecord(BaseModel):
    """One row of the training history."""

    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    val_kappa: float


class FiniteDiffReport(BaseModel):
    """Largest relative error per parameter from a central-difference check."""

    max_rel_error: Dict[str, float]
    step: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


# --- Synthetic data and heatmaps -----------------------------------------


class SynthSpec(BaseModel):
    """Synthetic slide generator settings."""

    model_config = ConfigDict(frozen=True)

    grid_w: PositiveInt = 16
    grid_h: PositiveInt = 16
    d: PositiveInt = 32
    n_slides: PositiveInt = 200
    lesion_count_range: Tuple[NonNegativeInt, NonNegativeInt] = (1, 1)
    lesion_radius_range: Tuple[NonNegativeInt, NonNegativeInt] = (3, 4)
    class_signal_scale: PositiveFloat = 3.0
    noise_scale: float = Field(default=0.5, ge=0.0)
    class_mixture: Tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SynthSpec":
        lo, hi = self.lesion_count_range
        if lo > hi:
            raise ValueError("lesion_count_range must be (min, max)")
        r_lo, r_hi = self.lesion_radius_range
        if r_lo > r_hi:
            raise ValueError("lesion_radius_range must be (min, max)")
        if hi > 0 and 2 * r_hi + 1 > min(self.grid_w, self.grid_h):
            raise ValueError(
                f"lesion radius {r_hi} exceeds a {self.grid_w}x{self.grid_h} grid"
            )
        if len(self.class_mixture) != NUM_CLASSES or any(p < 0 for p in self.class_mixture):
            raise ValueError(f"class_mixture needs {NUM_CLASSES} non-negative shares")
        if sum(self.class_mixture) <= 0:
            raise ValueError("class_mixture must not be all zero")
        return self


class SyntheticSlide(BaseModel):
    """Generated slide with its label and the ids of lesion patches."""

    model_config = ConfigDict(frozen=True)

    table: EmbeddingTable
    label: GradeLabel
    lesion_ids: Tuple[int, ...] = ()


class HeatmapArtifact(ArrayModel):
    """Per-patch scores on the (height x width) grid."""

    grid: np.ndarray
    normalization: Literal["minmax", "none"] = "minmax"

    @field_validator("grid", mode="before")
    @classmethod
    def _freeze(cls, value) -> np.ndarray:
        arr = frozen_array(value, ndim=2)
        if not np.all(np.isfinite(arr)):
            raise ValueError("heatmap scores must be finite")
        return arr

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]
