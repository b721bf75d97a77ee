"""Budgeted good-feature selection over information contributions.

Selection maximizes a spectral metric of the accumulated 6x6 information
matrix under a cardinality budget M. The stochastic-greedy variant samples
ceil(N/M * ln(1/eps)) candidates per round from the remaining pool (N re-read
as the current pool size), matches sampled candidates lazily against the map,
permanently drops the ones without a correspondence, and adds the sampled
candidate with the best metric gain. Simple greedy scans the whole pool each
round; a uniform-random baseline and a brute-force enumeration oracle share
the same bookkeeping so results are comparable.

Matching may be prefetched in vectorized batches: candidates are still
visited, scored, and removed exactly as in the lazy schedule (the selection
trace is identical), only the correspondence search runs ahead of time.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from scanreg.association import AssocConfig, FeatureMap, LineModel, PlaneModel, batch_match
from scanreg.features import KIND_EDGE, KIND_PLANAR, FeatureSet
from scanreg.geometry import Pose
from scanreg.residuals import NoiseModel, batch_edge_terms, batch_planar_terms, _loss_weights

try:
    from numba import njit

    _NUMBA_OK = True
except Exception:  # pragma: no cover - exercised only without numba
    _NUMBA_OK = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


class NotPositiveDefiniteError(ValueError):
    """log-det requested on a matrix that is not positive definite."""


@dataclass
class SelectorConfig:
    """Budget, sampling, and metric parameters for the selection loop."""

    budget: int | None = None
    ratio: float | None = None
    epsilon: float = 0.1
    t_max: float = 0.05
    metric: str = "logdet"
    prior_scale: float = 1e-3
    rng_seed: int = 0
    prefetch: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie strictly between 0 and 1")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.metric not in ("logdet", "trace", "mineig"):
            raise ValueError(f"unknown metric: {self.metric}")

    def resolve_budget(self, n: int) -> int:
        if self.budget is not None:
            m = int(self.budget)
        elif self.ratio is not None:
            m = int(math.ceil(self.ratio * n))
        else:
            raise ValueError("selector config needs a budget or a ratio")
        return max(0, min(m, n))


@dataclass
class InfoMatrix:
    """Accumulated information matrix with an identity prior for invertibility."""

    prior_scale: float = 1e-3
    matrix: np.ndarray = None

    def __post_init__(self):
        if self.matrix is None:
            self.matrix = self.prior_scale * np.eye(6)
        self.matrix = np.asarray(self.matrix, dtype=float)

    def add(self, contribution: np.ndarray) -> None:
        lam = self.matrix + contribution
        self.matrix = 0.5 * (lam + lam.T)

    def value(self, metric: str = "logdet") -> float:
        return metric_eval(metric, self.matrix)


@dataclass
class FeatureCandidate:
    """One selectable feature plus its lazily-computed correspondence cache."""

    position: np.ndarray
    kind: int = KIND_PLANAR
    status: str = "unvisited"  # unvisited | matched | unmatched
    info: np.ndarray | None = None
    model: object | None = None


@dataclass
class SelectionResult:
    selected: list[int]
    achieved_metric: float
    oracle_evaluations: int
    matched_count: int
    unmatched_count: int
    elapsed: float
    terminated_by: str  # budget | timeout | exhausted
    info: np.ndarray = None
    metric: str = "logdet"


@dataclass
class MatchContext:
    """Everything needed to match a candidate against the map at a fixed pose."""

    fmap: FeatureMap
    pose: Pose
    noise: NoiseModel = field(default_factory=NoiseModel)
    assoc: AssocConfig = field(default_factory=AssocConfig)


def metric_eval(metric: str, lam: np.ndarray) -> float:
    """Evaluate a spectral metric: logdet (via Cholesky), trace, or mineig."""
    lam = np.asarray(lam, dtype=float)
    if metric == "logdet":
        try:
            chol = np.linalg.cholesky(lam)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("information matrix is not positive definite; "
                                           "add a prior before taking logdet") from exc
        return float(2.0 * np.sum(np.log(np.diag(chol))))
    if metric == "trace":
        return float(np.trace(lam))
    if metric == "mineig":
        return float(np.linalg.eigvalsh(lam)[0])
    raise ValueError(f"unknown metric: {metric}")


class CandidatePool:
    """Array-backed candidate set with a persistent match cache."""

    def __init__(self, positions: np.ndarray, kinds: np.ndarray):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.kinds = np.asarray(kinds, dtype=np.int8).reshape(-1)
        n = self.positions.shape[0]
        self.known = np.zeros(n, dtype=bool)
        self.ok = np.zeros(n, dtype=bool)
        self.state = np.zeros(n, dtype=np.int8)  # 0 unvisited / 1 matched / 2 unmatched
        self.lam = np.zeros((n, 6, 6))
        self.plane_normal = np.zeros((n, 3))
        self.plane_offset = np.zeros(n)
        self.line_point = np.zeros((n, 3))
        self.line_dir = np.zeros((n, 3))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @staticmethod
    def from_feature_set(fset: FeatureSet) -> "CandidatePool":
        return CandidatePool(fset.positions, fset.kinds)

    @staticmethod
    def from_candidates(candidates) -> "CandidatePool":
        positions = np.array([np.asarray(c.position, dtype=float) for c in candidates]) \
            if candidates else np.empty((0, 3))
        kinds = np.array([c.kind for c in candidates], dtype=np.int8)
        pool = CandidatePool(positions, kinds)
        for i, c in enumerate(candidates):
            if c.status == "matched":
                pool.known[i] = True
                pool.ok[i] = True
                pool.lam[i] = np.asarray(c.info, dtype=float)
                if isinstance(c.model, PlaneModel):
                    pool.plane_normal[i] = c.model.normal
                    pool.plane_offset[i] = c.model.offset
                elif isinstance(c.model, LineModel):
                    pool.line_point[i] = c.model.point_on_line
                    pool.line_dir[i] = c.model.direction
            elif c.status == "unmatched":
                pool.known[i] = True
        return pool

    @staticmethod
    def from_info_blocks(lams: np.ndarray) -> "CandidatePool":
        """Synthetic pool of pre-matched candidates given their (N, 6, 6) blocks."""
        lams = np.asarray(lams, dtype=float)
        n = lams.shape[0]
        pool = CandidatePool(np.zeros((n, 3)), np.zeros(n, dtype=np.int8))
        pool.known[:] = True
        pool.ok[:] = True
        pool.lam[:] = lams
        return pool

    def ensure_matched(self, indices: np.ndarray, ctx: MatchContext) -> None:
        """Fill the match cache for the given rows (correspondence + info block)."""
        idx = np.asarray(indices, dtype=np.int64)
        idx = idx[~self.known[idx]]
        if idx.size == 0:
            return
        rot = ctx.pose.rotation_matrix()
        pts_world = self.positions[idx] @ rot.T + ctx.pose.trans
        res = batch_match(ctx.fmap, pts_world, self.kinds[idx], ctx.assoc)
        self.known[idx] = True
        self.ok[idx] = res["ok"]
        self.plane_normal[idx] = res["plane_normal"]
        self.plane_offset[idx] = res["plane_offset"]
        self.line_point[idx] = res["line_point"]
        self.line_dir[idx] = res["line_dir"]

        w_inv = ctx.noise.cov_inv
        pl = idx[res["ok"] & (self.kinds[idx] == KIND_PLANAR)]
        if pl.size:
            r, jac = batch_planar_terms(rot, ctx.pose.trans, self.positions[pl],
                                        self.plane_normal[pl], self.plane_offset[pl])
            s = np.einsum("bi,ij,bj->b", r, w_inv, r)
            weights = _loss_weights(s, ctx.noise)
            jw = np.einsum("ij,bjk->bik", w_inv, jac)
            self.lam[pl] = np.einsum("b,bri,brj->bij", weights, jac, jw)
        ed = idx[res["ok"] & (self.kinds[idx] == KIND_EDGE)]
        if ed.size:
            r, jac = batch_edge_terms(rot, ctx.pose.trans, self.positions[ed],
                                      self.line_point[ed], self.line_dir[ed])
            s = (np.einsum("bi,ij,bj->b", r[:, :3], w_inv, r[:, :3])
                 + np.einsum("bi,ij,bj->b", r[:, 3:], w_inv, r[:, 3:]))
            weights = _loss_weights(s, ctx.noise)
            w6 = np.zeros((6, 6))
            w6[:3, :3] = w_inv
            w6[3:, 3:] = w_inv
            jw = np.einsum("ij,bjk->bik", w6, jac)
            self.lam[ed] = np.einsum("b,bri,brj->bij", weights, jac, jw)

    def model_of(self, i: int):
        if not self.ok[i]:
            return None
        if self.kinds[i] == KIND_PLANAR:
            return PlaneModel(self.plane_normal[i].copy(), float(self.plane_offset[i]))
        return LineModel(self.line_point[i].copy(), self.line_dir[i].copy())

    def correspondences(self, indices):
        """Canonical (index-sorted) correspondence arrays for the solver."""
        from scanreg.residuals import CorrespondenceSet

        idx = np.sort(np.asarray(indices, dtype=np.int64))
        idx = idx[self.ok[idx]]
        pl = idx[self.kinds[idx] == KIND_PLANAR]
        ed = idx[self.kinds[idx] == KIND_EDGE]
        return CorrespondenceSet(
            planar_points=self.positions[pl].copy(),
            plane_normals=self.plane_normal[pl].copy(),
            plane_offsets=self.plane_offset[pl].copy(),
            edge_points=self.positions[ed].copy(),
            line_points=self.line_point[ed].copy(),
            line_dirs=self.line_dir[ed].copy(),
        )


class _UniformStream:
    """Deterministic uniform stream, buffered in fixed-size chunks so the
    value sequence does not depend on the request pattern."""

    CHUNK = 4096

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self.buf = self._rng.random(self.CHUNK)
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        got = 0
        while got < n:
            avail = self.buf.size - self.pos
            if avail == 0:
                self.buf = self._rng.random(self.CHUNK)
                self.pos = 0
                continue
            use = min(avail, n - got)
            out[got:got + use] = self.buf[self.pos:self.pos + use]
            self.pos += use
            got += use
        return out

    def extend(self) -> None:
        self.buf = np.concatenate([self.buf[self.pos:], self._rng.random(self.CHUNK)])
        self.pos = 0


# ---------------------------------------------------------------------------
# round kernels: a numba version for the hot path and a numpy twin with the
# exact same sampling, tie-breaking, and pool-compaction behavior
# ---------------------------------------------------------------------------

if _NUMBA_OK:

    @njit(cache=True)
    def _chol_logdet6(mat):
        ell = np.zeros((6, 6))
        acc = 0.0
        for i in range(6):
            for j in range(i + 1):
                s = mat[i, j]
                for k in range(j):
                    s -= ell[i, k] * ell[j, k]
                if i == j:
                    if s <= 0.0:
                        return -np.inf
                    ell[i, i] = np.sqrt(s)
                    acc += np.log(ell[i, i])
                else:
                    ell[i, j] = s / ell[j, j]
        return 2.0 * acc

    @njit(cache=True)
    def _rounds_kernel(pool, pool_n, lam, ok, state, lam_s, selected, n_sel,
                       m, factor, full_scan, uniforms, ucursor, max_rounds,
                       sample_buf, keep_buf, counters):
        scratch = np.zeros((6, 6))
        for _ in range(max_rounds):
            if n_sel >= m:
                return 1, pool_n, n_sel, ucursor
            n = pool_n
            if n == 0:
                return 2, pool_n, n_sel, ucursor
            if full_scan:
                s = n
            else:
                s = int(math.ceil(n * factor / m))
                if s < 1:
                    s = 1
                if s > n:
                    s = n
            if s < n:
                if ucursor + s > uniforms.size:
                    return 3, pool_n, n_sel, ucursor
                for i in range(s):
                    u = uniforms[ucursor]
                    ucursor += 1
                    j = i + int(u * (n - i))
                    if j >= n:
                        j = n - 1
                    tmp = pool[i]
                    pool[i] = pool[j]
                    pool[j] = tmp
            for i in range(s):
                sample_buf[i] = pool[i]
            sample = sample_buf[:s]
            sample.sort()
            best_idx = -1
            best_val = -np.inf
            for ii in range(s):
                idx = sample[ii]
                if state[idx] == 0:
                    if ok[idx]:
                        state[idx] = 1
                        counters[1] += 1
                    else:
                        state[idx] = 2
                        counters[2] += 1
                if state[idx] == 2:
                    continue
                for a in range(6):
                    for b in range(6):
                        scratch[a, b] = lam_s[a, b] + lam[idx, a, b]
                val = _chol_logdet6(scratch)
                counters[0] += 1
                if val > best_val:
                    best_val = val
                    best_idx = idx
            w = 0
            for i in range(s):
                idx = pool[i]
                if state[idx] == 2 or idx == best_idx:
                    continue
                keep_buf[w] = idx
                w += 1
            for i in range(w):
                pool[i] = keep_buf[i]
            shift = s - w
            if shift > 0:
                for i in range(s, n):
                    pool[i - shift] = pool[i]
            pool_n = n - shift
            if best_idx >= 0:
                for a in range(6):
                    for b in range(6):
                        lam_s[a, b] += lam[best_idx, a, b]
                selected[n_sel] = best_idx
                n_sel += 1
        return 0, pool_n, n_sel, ucursor


def _chol_logdet_many(mats: np.ndarray) -> np.ndarray:
    """Batched 6x6 Cholesky log-determinants; -inf rows for non-PD inputs."""
    b = mats.shape[0]
    ell = np.zeros_like(mats)
    acc = np.zeros(b)
    bad = np.zeros(b, dtype=bool)
    for i in range(6):
        for j in range(i + 1):
            s = mats[:, i, j].copy()
            for k in range(j):
                s -= ell[:, i, k] * ell[:, j, k]
            if i == j:
                bad |= s <= 0.0
                ell[:, i, i] = np.sqrt(np.where(s <= 0.0, 1.0, s))
                acc += np.log(ell[:, i, i])
            else:
                ell[:, i, j] = s / np.where(ell[:, j, j] == 0.0, 1.0, ell[:, j, j])
    out = 2.0 * acc
    out[bad] = -np.inf
    return out


def _score_gain(metric: str, lam_s: np.ndarray, lams: np.ndarray) -> np.ndarray:
    mats = lam_s[None, :, :] + lams
    if metric == "logdet":
        return _chol_logdet_many(mats)
    if metric == "trace":
        return np.trace(mats, axis1=1, axis2=2)
    return np.linalg.eigvalsh(mats)[:, 0]


def _greedy_engine(pool: CandidatePool, config: SelectorConfig,
                   context: MatchContext | None, full_scan: bool) -> SelectionResult:
    t0 = time.perf_counter()
    deadline = t0 + config.t_max
    n = len(pool)
    m = config.resolve_budget(n)
    lam_s = config.prior_scale * np.eye(6)
    selected: list[int] = []
    counters = np.zeros(3, dtype=np.int64)  # oracle evals, matched, unmatched

    def _result(terminated: str) -> SelectionResult:
        return SelectionResult(
            selected=list(selected),
            achieved_metric=metric_eval(config.metric, lam_s),
            oracle_evaluations=int(counters[0]),
            matched_count=int(counters[1]),
            unmatched_count=int(counters[2]),
            elapsed=time.perf_counter() - t0,
            terminated_by=terminated,
            info=lam_s.copy(),
            metric=config.metric,
        )

    if m == 0:
        return _result("budget")
    if n == 0:
        return _result("exhausted")

    stream = _UniformStream(config.rng_seed)
    if config.prefetch and context is not None:
        unknown = np.nonzero(~pool.known)[0]
        for start in range(0, unknown.size, 1024):
            if time.perf_counter() >= deadline:
                break
            pool.ensure_matched(unknown[start:start + 1024], context)
    if (~pool.known).any() and context is None:
        raise ValueError("unvisited candidates need a MatchContext to be matched")

    factor = math.log(1.0 / config.epsilon)
    pool_idx = np.arange(n, dtype=np.int64)
    pool_n = n

    use_kernel = (_NUMBA_OK and config.metric == "logdet" and bool(pool.known.all()))
    if use_kernel:
        sample_buf = np.empty(n, dtype=np.int64)
        keep_buf = np.empty(n, dtype=np.int64)
        sel_buf = np.empty(max(m, 1), dtype=np.int64)
        n_sel = 0
        while True:
            if time.perf_counter() >= deadline:
                return _result_from_kernel(_result, sel_buf, n_sel, selected, "timeout")
            code, pool_n, n_sel, new_pos = _rounds_kernel(
                pool_idx, pool_n, pool.lam, pool.ok, pool.state, lam_s, sel_buf, n_sel,
                m, factor, full_scan, stream.buf, stream.pos, 256,
                sample_buf, keep_buf, counters)
            stream.pos = int(new_pos)
            if code == 1:
                return _result_from_kernel(_result, sel_buf, n_sel, selected, "budget")
            if code == 2:
                return _result_from_kernel(_result, sel_buf, n_sel, selected, "exhausted")
            if code == 3:
                stream.extend()

    # numpy twin: same sampling, scoring order, and pool bookkeeping
    while True:
        if len(selected) >= m:
            return _result("budget")
        if pool_n == 0:
            return _result("exhausted")
        if time.perf_counter() >= deadline:
            return _result("timeout")
        nn = pool_n
        if full_scan:
            s = nn
        else:
            s = min(max(1, int(math.ceil(nn * factor / m))), nn)
        if s < nn:
            uniforms = stream.take(s)
            for i in range(s):
                j = i + int(uniforms[i] * (nn - i))
                if j >= nn:
                    j = nn - 1
                pool_idx[i], pool_idx[j] = pool_idx[j], pool_idx[i]
        sample = np.sort(pool_idx[:s].copy())
        fresh = sample[pool.state[sample] == 0]
        if fresh.size and context is not None:
            pool.ensure_matched(fresh, context)
        if fresh.size:
            newly_ok = pool.ok[fresh]
            pool.state[fresh] = np.where(newly_ok, 1, 2).astype(np.int8)
            counters[1] += int(newly_ok.sum())
            counters[2] += int((~newly_ok).sum())
        matched_sample = sample[pool.state[sample] == 1]
        best_idx = -1
        if matched_sample.size:
            vals = _score_gain(config.metric, lam_s, pool.lam[matched_sample])
            counters[0] += matched_sample.size
            best = int(np.argmax(vals))
            best_idx = int(matched_sample[best])
        keep = [pool_idx[i] for i in range(s)
                if pool.state[pool_idx[i]] != 2 and pool_idx[i] != best_idx]
        w = len(keep)
        pool_idx[:w] = keep
        shift = s - w
        if shift > 0:
            pool_idx[w:pool_n - shift] = pool_idx[s:pool_n]
        pool_n -= shift
        if best_idx >= 0:
            lam_s += pool.lam[best_idx]
            selected.append(best_idx)


def _result_from_kernel(result_fn, sel_buf, n_sel, selected, terminated):
    selected.extend(int(v) for v in sel_buf[:n_sel])
    return result_fn(terminated)


def _as_pool(candidates) -> tuple[CandidatePool, list | None]:
    if isinstance(candidates, CandidatePool):
        return candidates, None
    if isinstance(candidates, FeatureSet):
        return CandidatePool.from_feature_set(candidates), None
    clist = list(candidates)
    return CandidatePool.from_candidates(clist), clist


def _write_back(pool: CandidatePool, clist) -> None:
    if clist is None:
        return
    for i, cand in enumerate(clist):
        if pool.state[i] == 1:
            cand.status = "matched"
            cand.info = pool.lam[i].copy()
            cand.model = pool.model_of(i)
        elif pool.state[i] == 2:
            cand.status = "unmatched"


def stochastic_greedy_select(candidates, config: SelectorConfig,
                             context: MatchContext | None = None) -> SelectionResult:
    """Randomized greedy selection with per-round subsampling (see module doc)."""
    pool, clist = _as_pool(candidates)
    result = _greedy_engine(pool, config, context, full_scan=False)
    _write_back(pool, clist)
    return result


def simple_greedy_select(candidates, config: SelectorConfig,
                         context: MatchContext | None = None) -> SelectionResult:
    """Greedy selection scanning the entire remaining pool every round."""
    pool, clist = _as_pool(candidates)
    result = _greedy_engine(pool, config, context, full_scan=True)
    _write_back(pool, clist)
    return result


def random_select(candidates, m: int, rng_seed: int = 0,
                  context: MatchContext | None = None,
                  prior_scale: float = 1e-3) -> SelectionResult:
    """Uniform selection without replacement; unmatched draws are redrawn."""
    t0 = time.perf_counter()
    pool, clist = _as_pool(candidates)
    n = len(pool)
    m = max(0, min(int(m), n))
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(n)
    selected: list[int] = []
    matched = 0
    unmatched = 0
    chunk = 256
    for start in range(0, n, chunk):
        if len(selected) >= m:
            break
        part = order[start:start + chunk]
        if context is not None:
            pool.ensure_matched(part[~pool.known[part]], context)
        for idx in part:
            if len(selected) >= m:
                break
            if pool.state[idx] == 0:
                pool.state[idx] = 1 if pool.ok[idx] else 2
                if pool.ok[idx]:
                    matched += 1
                else:
                    unmatched += 1
            if pool.state[idx] == 1:
                selected.append(int(idx))
    lam_s = prior_scale * np.eye(6)
    for idx in sorted(selected):
        lam_s += pool.lam[idx]
    _write_back(pool, clist)
    return SelectionResult(
        selected=selected,
        achieved_metric=metric_eval("logdet", lam_s),
        oracle_evaluations=0,
        matched_count=matched,
        unmatched_count=unmatched,
        elapsed=time.perf_counter() - t0,
        terminated_by="budget" if len(selected) >= m else "exhausted",
        info=lam_s,
        metric="logdet",
    )


def brute_force_select(candidates, m: int, metric: str = "logdet",
                       prior_scale: float = 1e-3,
                       max_combinations: int = 1_000_000) -> SelectionResult:
    """Exact optimum by enumeration; ties resolve to the lexicographically
    first index set. Requires pre-matched candidates."""
    t0 = time.perf_counter()
    pool, clist = _as_pool(candidates)
    ok_idx = np.nonzero(pool.ok)[0]
    m = max(0, min(int(m), ok_idx.size))
    n_comb = math.comb(ok_idx.size, m)
    if n_comb > max_combinations:
        raise ValueError(f"C({ok_idx.size}, {m}) = {n_comb} exceeds enumeration budget")
    prior = prior_scale * np.eye(6)
    best_val = -np.inf
    best_set: tuple[int, ...] = tuple(int(v) for v in ok_idx[:m])
    evals = 0
    combos = itertools.combinations(ok_idx.tolist(), m)
    while True:
        batch = list(itertools.islice(combos, 4096))
        if not batch:
            break
        arr = np.asarray(batch, dtype=np.int64)
        mats = prior[None] + pool.lam[arr].sum(axis=1) if m else np.repeat(prior[None], len(batch), 0)
        if metric == "logdet":
            vals = _chol_logdet_many(mats)
        elif metric == "trace":
            vals = np.trace(mats, axis1=1, axis2=2)
        else:
            vals = np.linalg.eigvalsh(mats)[:, 0]
        evals += len(batch)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_set = tuple(int(v) for v in batch[k])
    lam_s = prior.copy()
    for idx in best_set:
        lam_s += pool.lam[idx]
    return SelectionResult(
        selected=list(best_set),
        achieved_metric=metric_eval(metric, lam_s),
        oracle_evaluations=evals,
        matched_count=int(pool.ok.sum()),
        unmatched_count=int(len(pool) - pool.ok.sum()),
        elapsed=time.perf_counter() - t0,
        terminated_by="budget",
        info=lam_s,
        metric=metric,
    )
