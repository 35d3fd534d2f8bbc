"""Matryoshka contrastive objective with a temporal subspace, and its gradients.

Every batched loss returns ``(value, grads)`` where ``grads`` holds the
derivative with respect to each input array, in the input's shape. The
scalar helpers (:func:`infonce`, :func:`linear_cka`) exist for direct use and
as oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError
from .numkit import (
    as_matrix,
    center_rows,
    log_sum_exp,
    log_sum_exp_masked,
    normalize_rows,
    normalize_rows_backward,
    prefix_cosine,
)

CKA_VARIANTS = ("covariance", "gram")


@dataclass(frozen=True)
class LossConfig:
    M: tuple[int, ...] = (8, 16, 32, 64)
    weights: tuple[float, ...] | None = None
    t: int = 8
    tau: float = 0.05
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.1
    k: int = 4
    cka_variant: str = "covariance"
    temporal_in_batch: bool = False

    def __post_init__(self):
        M = tuple(int(m) for m in self.M)
        object.__setattr__(self, "M", M)
        if not M or list(M) != sorted(set(M)):
            raise ConfigError(f"M must be strictly ascending and non-empty, got {M}")
        w = tuple(float(x) for x in (self.weights if self.weights is not None else [1.0] * len(M)))
        object.__setattr__(self, "weights", w)
        if len(w) != len(M):
            raise ConfigError(f"{len(w)} weights given for {len(M)} truncation levels")
        if min((*w, self.alpha, self.beta, self.gamma)) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.t >= 1 or M[0] < self.t:
            raise ConfigError(f"temporal dim t={self.t} must satisfy 1 <= t <= min(M)={M[0]}")
        if not self.tau > 0:
            raise ConfigError("temperature must be positive")
        if self.k < 1:
            raise ConfigError("top-k must be >= 1")
        if self.cka_variant not in CKA_VARIANTS:
            raise ConfigError(f"cka_variant must be one of {CKA_VARIANTS}")

    @property
    def d(self) -> int:
        return self.M[-1]

    def with_(self, **changes) -> "LossConfig":
        return replace(self, **changes)


@dataclass
class ContrastiveBatch:
    """Pooled embeddings and projected temporal vectors for one mini-batch.

    ``anchors[i]`` is contrasted with ``positives[i]``; ``negatives[i]`` holds
    that anchor's hard negatives (shape B x n x d, ``n`` may be 0). The
    ``*_t`` arrays are projector outputs; rows with a False presence flag are
    ignored by the temporal loss.
    """

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    anchors_t: np.ndarray | None = None
    positives_t: np.ndarray | None = None
    negatives_t: np.ndarray | None = None
    anchors_t_present: np.ndarray | None = None
    positives_t_present: np.ndarray | None = None
    negatives_t_present: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.anchors = as_matrix(self.anchors, "anchors")
        self.positives = as_matrix(self.positives, "positives")
        B, d = self.anchors.shape
        if self.positives.shape != (B, d):
            raise DimensionError(f"positives {self.positives.shape} do not match anchors {(B, d)}")
        neg = np.asarray(self.negatives, dtype=np.float64)
        if neg.size == 0:
            neg = np.zeros((B, 0, d))
        if neg.ndim != 3 or neg.shape[0] != B or neg.shape[2] != d:
            raise DimensionError(f"negatives must be (B, n, d) = ({B}, n, {d}), got {neg.shape}")
        self.negatives = neg
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (B,):
                raise DimensionError(f"groups must have shape ({B},)")
        n = neg.shape[1]
        expected = {"anchors_t": (B,), "positives_t": (B,), "negatives_t": (B, n)}
        for name, lead in expected.items():
            arr = getattr(self, name)
            flag = f"{name}_present"
            if arr is None:
                setattr(self, flag, np.zeros(lead, dtype=bool))
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape[:-1] != lead:
                raise DimensionError(f"{name} must have leading shape {lead}, got {arr.shape}")
            setattr(self, name, arr)
            pres = getattr(self, flag)
            pres = np.ones(lead, dtype=bool) if pres is None else np.asarray(pres, dtype=bool)
            if pres.shape != lead:
                raise DimensionError(f"{flag} must have shape {lead}")
            setattr(self, flag, pres)

    @property
    def B(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    @property
    def n_neg(self) -> int:
        return self.negatives.shape[1]

    @property
    def t(self) -> int | None:
        for arr in (self.anchors_t, self.positives_t, self.negatives_t):
            if arr is not None:
                return arr.shape[-1]
        return None

    def same_group(self) -> np.ndarray:
        """``[i, j]`` is True when anchors i != j come from the same source passage."""
        B = self.B
        if self.groups is None:
            return np.zeros((B, B), dtype=bool)
        same = self.groups[:, None] == self.groups[None, :]
        np.fill_diagonal(same, False)
        return same

    def mixed(self) -> np.ndarray:
        """Anchors stacked over positives, the input of the structural losses."""
        return np.vstack([self.anchors, self.positives])


# --------------------------------------------------------------------------
# InfoNCE


def infonce(q, pos, negs, m: int, tau: float) -> float:
    """Single-anchor InfoNCE at truncation ``m``; zero when there are no negatives."""
    negs = list(negs)
    if not negs:
        return 0.0
    s_pos = prefix_cosine(q, pos, m) / tau
    logits = [s_pos] + [prefix_cosine(q, n, m) / tau for n in negs]
    return max(log_sum_exp(logits) - s_pos, 0.0)


def _safe_rows(X: np.ndarray, present: np.ndarray | None) -> np.ndarray:
    if present is None or present.all():
        return X
    X = X.copy()
    X[~present] = 1.0
    return X


def cosine_contrastive(anchors: np.ndarray, candidates: np.ndarray, pos_index: np.ndarray, mask: np.ndarray,
                       row_weight: np.ndarray, m: int, tau: float):
    """``sum_i w_i * CE_i`` over a shared candidate pool.

    ``CE_i = lse_{j in mask_i}(s_ij) - s_i,pos(i)`` with ``s = cos(a_i[:m], c_j[:m]) / tau``.
    Rows with zero weight may hold placeholder vectors. Returns the value and
    gradients with respect to ``anchors`` and ``candidates``.
    """
    Ua, na = normalize_rows(anchors, m)
    Uc, nc = normalize_rows(candidates, m)
    S = (Ua @ Uc.T) / tau
    rows = np.arange(len(Ua))
    mask = mask.copy()
    mask[rows, pos_index] = True
    lse, P = log_sum_exp_masked(S, mask)
    ce = lse - S[rows, pos_index]
    value = float(np.sum(row_weight * ce))
    dS = P
    dS[rows, pos_index] -= 1.0
    dS *= row_weight[:, None] / tau
    dUa = dS @ Uc
    dUc = dS.T @ Ua
    ga = np.zeros_like(anchors)
    gc = np.zeros_like(candidates)
    ga[:, :m] = normalize_rows_backward(dUa, Ua, na)
    gc[:, :m] = normalize_rows_backward(dUc, Uc, nc)
    return value, ga, gc


def _pool_mask(B: int, n: int, in_batch: bool, neg_present: np.ndarray | None = None,
               same_group: np.ndarray | None = None) -> np.ndarray:
    """Candidate mask over [positives (B) | negatives (B*n)] for each anchor."""
    mask = np.zeros((B, B + B * n), dtype=bool)
    if in_batch:
        mask[:, :B] = True if same_group is None else ~same_group
    for i in range(B):
        block = slice(B + i * n, B + (i + 1) * n)
        mask[i, block] = True if neg_present is None else neg_present[i]
    return mask


def mrl_loss(batch: ContrastiveBatch, cfg: LossConfig):
    """``sum_m w_m * mean_i InfoNCE`` with in-batch positives and hard negatives."""
    B, d, n = batch.B, batch.d, batch.n_neg
    if d != cfg.d:
        raise ConfigError(f"embedding dim {d} does not match max(M)={cfg.d}")
    cand = np.vstack([batch.positives, batch.negatives.reshape(B * n, d)])
    mask = _pool_mask(B, n, in_batch=True, same_group=batch.same_group())
    gA = np.zeros_like(batch.anchors)
    gC = np.zeros_like(cand)
    total = 0.0
    pos = np.arange(B)
    for m, w in zip(cfg.M, cfg.weights):
        if w == 0:
            continue
        v, ga, gc = cosine_contrastive(batch.anchors, cand, pos, mask, np.full(B, w / B), m, cfg.tau)
        total += v
        gA += ga
        gC += gc
    return total, {"anchors": gA, "positives": gC[:B], "negatives": gC[B:].reshape(B, n, d)}


def temporal_subspace_loss(batch: ContrastiveBatch, cfg: LossConfig):
    """Two-direction contrastive loss inside the first ``t`` dimensions.

    Anchor side: the anchor's projected temporal vector against the ``t``-prefix
    of the positive and hard-negative embeddings. Positive side: the anchor's
    ``t``-prefix against the projected temporal vectors of the positive and the
    hard negatives. Each direction is summed over participating anchors and
    divided by B.
    """
    B, d, n, t = batch.B, batch.d, batch.n_neg, cfg.t
    grads = {
        "anchors": np.zeros_like(batch.anchors),
        "positives": np.zeros_like(batch.positives),
        "negatives": np.zeros_like(batch.negatives),
        "anchors_t": None if batch.anchors_t is None else np.zeros_like(batch.anchors_t),
        "positives_t": None if batch.positives_t is None else np.zeros_like(batch.positives_t),
        "negatives_t": None if batch.negatives_t is None else np.zeros_like(batch.negatives_t),
    }
    bt = batch.t
    if bt is not None and bt != t:
        raise ConfigError(f"temporal vectors have dim {bt}, config says t={t}")
    if t > d:
        raise ConfigError(f"t={t} exceeds embedding dim {d}")
    total = 0.0
    pos = np.arange(B)

    # anchor temporal vector vs t-prefix of positive / negatives
    a_on = batch.anchors_t_present
    if batch.anchors_t is not None and a_on.any():
        cand = np.vstack([batch.positives, batch.negatives.reshape(B * n, d)])[:, :t]
        mask = _pool_mask(B, n, cfg.temporal_in_batch, same_group=batch.same_group())
        v, ga, gc = cosine_contrastive(_safe_rows(batch.anchors_t, a_on), cand, pos, mask,
                                       a_on / B, t, cfg.tau)
        total += v
        grads["anchors_t"] = ga * a_on[:, None]
        grads["positives"][:, :t] += gc[:B]
        grads["negatives"][..., :t] += gc[B:].reshape(B, n, t)

    # t-prefix of anchor vs positive / negative temporal vectors
    p_on = batch.positives_t_present
    if batch.positives_t is not None and p_on.any():
        if n and batch.negatives_t is not None:
            neg_t = batch.negatives_t.reshape(B * n, t)
            neg_on = batch.negatives_t_present
        else:
            neg_t = np.zeros((B * n, t))
            neg_on = np.zeros((B, n), dtype=bool)
        cand_on = np.concatenate([p_on, neg_on.reshape(-1)])
        cand = _safe_rows(np.vstack([batch.positives_t, neg_t]), cand_on)
        mask = _pool_mask(B, n, cfg.temporal_in_batch, neg_on, batch.same_group())
        if cfg.temporal_in_batch:
            mask[:, :B] &= p_on[None, :]
        v, ga, gc = cosine_contrastive(batch.anchors[:, :t], cand, pos, mask, p_on / B, t, cfg.tau)
        total += v
        grads["anchors"][:, :t] += ga
        gc = gc * cand_on[:, None]
        grads["positives_t"] = gc[:B]
        if grads["negatives_t"] is not None:
            grads["negatives_t"] = gc[B:].reshape(B, n, t)
    return total, grads


# --------------------------------------------------------------------------
# structural regularizers


# Differences this small are rounding noise (e.g. two copies of one passage in
# a batch); they take the zero subgradient instead of a noise-driven sign.
KINK_TOL = 1e-12


def _kink_sign(diff: np.ndarray) -> np.ndarray:
    return np.where(np.abs(diff) > KINK_TOL, np.sign(diff), 0.0)


def _topk_neighbors(Sd: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` most similar other rows; ties go to the lower index."""
    S = Sd.copy()
    np.fill_diagonal(S, -np.inf)
    return np.argsort(-S, axis=1, kind="stable")[:, :k]


def effective_k(k: int, n_rows: int) -> int:
    return max(1, min(k, n_rows - 1))


def distill_signature(X, cfg: LossConfig) -> bytes:
    """Identifies the smooth piece of the distillation loss that ``X`` lies on.

    The loss is piecewise smooth: neighbour sets and the signs inside the
    absolute values select the piece. Finite differences are only meaningful
    when every stencil point shares the signature of the centre.
    """
    X = as_matrix(X)
    N, d = X.shape
    levels = [m for m in cfg.M if m != d]
    if N < 2 or not levels:
        return b""
    Ud, _ = normalize_rows(X)
    Sd = Ud @ Ud.T
    nbr = _topk_neighbors(Sd, effective_k(cfg.k, N))
    parts = [nbr.astype(np.int32).tobytes()]
    rows = np.arange(N)[:, None]
    for m in levels:
        Um, _ = normalize_rows(X, m)
        parts.append(_kink_sign(Sd[rows, nbr] - (Um @ Um.T)[rows, nbr]).astype(np.int8).tobytes())
    return b"".join(parts)


def topk_distill_loss(X, cfg: LossConfig):
    """``sum_{m<d} sum_i sum_{j in N(i)} |cos_d(x_i, x_j) - cos_m(x_i, x_j)|``."""
    X = as_matrix(X)
    N, d = X.shape
    if N < 2:
        raise ValueError("top-k distillation needs at least two rows")
    if d != cfg.d:
        raise ConfigError(f"embedding dim {d} does not match max(M)={cfg.d}")
    levels = [m for m in cfg.M if m != d]
    grad = np.zeros_like(X)
    if not levels:
        return 0.0, {"X": grad}
    k = effective_k(cfg.k, N)
    Ud, nd = normalize_rows(X)
    Sd = Ud @ Ud.T
    nbr = _topk_neighbors(Sd, k)
    sel = np.zeros((N, N), dtype=bool)
    sel[np.repeat(np.arange(N), k), nbr.reshape(-1)] = True
    total = 0.0
    dSd = np.zeros((N, N))
    for m in levels:
        Um, nm = normalize_rows(X, m)
        Sm = Um @ Um.T
        diff = np.where(sel, Sd - Sm, 0.0)
        total += float(np.abs(diff).sum())
        sgn = _kink_sign(diff)
        dSd += sgn
        dUm = (sgn + sgn.T) @ Um
        grad[:, :m] += normalize_rows_backward(-dUm, Um, nm)
    grad += normalize_rows_backward((dSd + dSd.T) @ Ud, Ud, nd)
    return total, {"X": grad}


def _cka_parts(Xc: np.ndarray, Yc: np.ndarray, variant: str):
    if variant == "gram":
        K, L = Xc @ Xc.T, Yc @ Yc.T
        num = float(np.sum(K * L))
        nx, ny = np.linalg.norm(K), np.linalg.norm(L)
        if nx == 0 or ny == 0:
            raise DegenerateInputError("CKA input has zero variance after centering")
        dnum_x, dnum_y = 2 * L @ Xc, 2 * K @ Yc
        dnx, dny = 2 * K @ Xc / nx, 2 * L @ Yc / ny
    else:
        C = Xc.T @ Yc
        Kx, Ky = Xc.T @ Xc, Yc.T @ Yc
        num = float(np.sum(C * C))
        nx, ny = np.linalg.norm(Kx), np.linalg.norm(Ky)
        if nx == 0 or ny == 0:
            raise DegenerateInputError("CKA input has zero variance after centering")
        dnum_x, dnum_y = 2 * Yc @ C.T, 2 * Xc @ C
        dnx, dny = 2 * Xc @ Kx / nx, 2 * Yc @ Ky / ny
    cka = num / (nx * ny)
    gx = dnum_x / (nx * ny) - cka * dnx / nx
    gy = dnum_y / (nx * ny) - cka * dny / ny
    return cka, gx, gy


def linear_cka(X, Y, variant: str = "covariance") -> float:
    """Linear CKA ``||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)`` on centered rows."""
    return linear_cka_with_grad(X, Y, variant)[0]


def linear_cka_with_grad(X, Y, variant: str = "covariance"):
    X, Y = as_matrix(X, "X"), as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"CKA needs equal row counts, got {X.shape[0]} and {Y.shape[0]}")
    if X.shape[0] < 2:
        raise DimensionError("CKA needs at least two rows")
    if variant not in CKA_VARIANTS:
        raise ConfigError(f"unknown CKA variant {variant!r}")
    cka, gx, gy = _cka_parts(center_rows(X), center_rows(Y), variant)
    # centering is an orthogonal projection, so its adjoint is itself
    return float(min(max(cka, 0.0), 1.0)), center_rows(gx), center_rows(gy)


def cka_loss(X_full, cfg: LossConfig):
    """``sum_{m<d} (1 - CKA(X, X[:, :m]))``."""
    X = as_matrix(X_full)
    if X.shape[1] != cfg.d:
        raise ConfigError(f"embedding dim {X.shape[1]} does not match max(M)={cfg.d}")
    grad = np.zeros_like(X)
    total = 0.0
    for m in cfg.M:
        if m == cfg.d:
            continue
        X_m = X[:, :m]
        Xc, Yc = center_rows(X), center_rows(X_m)
        cka, gx, gy = _cka_parts(Xc, Yc, cfg.cka_variant)
        total += 1.0 - cka
        grad -= center_rows(gx)
        grad[:, :m] -= center_rows(gy)
    return total, {"X": grad}


# --------------------------------------------------------------------------
# combined objective


@dataclass
class LossResult:
    total: float
    components: dict[str, float]
    grads: dict[str, np.ndarray | None] = field(default_factory=dict)
    signature: bytes = b""


def _add(acc: dict, key: str, g, scale: float = 1.0):
    if g is None or scale == 0:
        return
    if acc.get(key) is None:
        acc[key] = scale * g
    else:
        acc[key] = acc[key] + scale * g


def tmrl_total(batch: ContrastiveBatch, X_mixed: np.ndarray | None, cfg: LossConfig) -> LossResult:
    """``L_MRL + alpha L_Temp + beta L_Dist + gamma L_CKA`` with gradients.

    When ``X_mixed`` is None it is taken to be ``batch.mixed()`` and its
    gradient is folded into ``anchors`` / ``positives``; otherwise it is
    returned separately under ``"X_mixed"``.
    """
    fold = X_mixed is None
    X = batch.mixed() if fold else as_matrix(X_mixed, "X_mixed")
    comps: dict[str, float] = {}
    grads: dict[str, np.ndarray | None] = {
        "anchors": None, "positives": None, "negatives": None,
        "anchors_t": None, "positives_t": None, "negatives_t": None, "X_mixed": None,
    }
    v, g = mrl_loss(batch, cfg)
    comps["mrl"] = v
    for key, arr in g.items():
        _add(grads, key, arr)
    total = v

    comps["temp"] = comps["dist"] = comps["cka"] = 0.0
    signature = b""
    if cfg.alpha > 0:
        v, g = temporal_subspace_loss(batch, cfg)
        comps["temp"] = v
        total += cfg.alpha * v
        for key, arr in g.items():
            _add(grads, key, arr, cfg.alpha)
    if cfg.beta > 0:
        v, g = topk_distill_loss(X, cfg)
        signature = distill_signature(X, cfg)
        comps["dist"] = v
        total += cfg.beta * v
        _add(grads, "X_mixed", g["X"], cfg.beta)
    if cfg.gamma > 0:
        v, g = cka_loss(X, cfg)
        comps["cka"] = v
        total += cfg.gamma * v
        _add(grads, "X_mixed", g["X"], cfg.gamma)

    if fold and grads["X_mixed"] is not None:
        B = batch.B
        _add(grads, "anchors", grads["X_mixed"][:B])
        _add(grads, "positives", grads["X_mixed"][B:])
        grads["X_mixed"] = None
    for key in ("anchors", "positives", "negatives"):
        if grads[key] is None:
            grads[key] = np.zeros_like(getattr(batch, key))
    comps["total"] = total
    return LossResult(total, comps, grads, signature)
