"""Scenario files: parsing, validation, canonical form, engine assembly.

A scenario is one JSON document describing the grid, the factor models per
curve, initial curves, volatilities, the rating block, the recovery
scheme, and the Monte Carlo controls.  Validation errors carry the field
path.  The canonical serialization (sorted keys, tight separators) is
hashed into every artifact header and must round-trip: parse ->
canonicalize -> parse yields the identical configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .curves import TimeGrid, VolatilitySurface
from .engine import EngineTables, build_tables
from .levy_core import LevyModel
from .pricing import RecoveryScheme, SchemeTag

BUNDLED = ("k2_market", "k3_treasury", "k3_par", "k3_multiple")


class ScenarioError(ValueError):
    """Scenario failed to parse or validate; message carries the path."""


def _need(obj: dict, key: str, path: str):
    if key not in obj:
        raise ScenarioError(f"{path}.{key}: required")
    return obj[key]


def _curve_values(spec: dict, grid: TimeGrid, path: str) -> np.ndarray:
    kind = _need(spec, "kind", path)
    th = grid.times
    if kind == "flat":
        return np.full(grid.n_nodes, float(_need(spec, "rate", path)))
    if kind == "linear":
        return float(_need(spec, "base", path)) + float(_need(spec, "slope", path)) * th
    if kind == "nelson_siegel":
        b0 = float(_need(spec, "beta0", path))
        b1 = float(_need(spec, "beta1", path))
        b2 = float(_need(spec, "beta2", path))
        tau = float(_need(spec, "tau", path))
        x = np.where(th > 0, th / tau, 1e-12)
        w = (1 - np.exp(-x)) / x
        return b0 + b1 * w + b2 * (w - np.exp(-x))
    if kind == "grid":
        vals = np.asarray(_need(spec, "values", path), dtype=np.float64)
        if vals.shape != (grid.n_nodes,):
            raise ScenarioError(f"{path}.values: need {grid.n_nodes} nodes")
        return vals
    raise ScenarioError(f"{path}.kind: unknown curve kind {kind!r}")


def _vol_surface(spec: dict, grid: TimeGrid, path: str,
                 owner: int | None) -> VolatilitySurface:
    kind = _need(spec, "kind", path)
    if kind == "constant":
        return VolatilitySurface.constant(grid, _need(spec, "values", path), owner)
    if kind == "exponential":
        return VolatilitySurface.exponential_decay(
            grid, _need(spec, "scales", path),
            float(_need(spec, "decay", path)), owner)
    if kind == "zero":
        return VolatilitySurface.zero(grid, int(spec.get("dim", 1)), owner)
    if kind == "grid":
        return VolatilitySurface(grid, np.asarray(_need(spec, "values", path)), owner)
    raise ScenarioError(f"{path}.kind: unknown volatility kind {kind!r}")


def _levy_model(spec: dict, path: str) -> LevyModel:
    dim = int(_need(spec, "dim", path))
    a = np.asarray(_need(spec, "a", path), dtype=np.float64)
    qspec = _need(spec, "q", path)
    qkind = _need(qspec, "kind", f"{path}.q")
    if qkind == "identity":
        q = np.eye(dim)
    elif qkind == "diagonal":
        q = np.diag(np.asarray(_need(qspec, "values", f"{path}.q"), dtype=np.float64))
    elif qkind == "dense":
        q = np.asarray(_need(qspec, "values", f"{path}.q"), dtype=np.float64)
    elif qkind == "zero":
        q = np.zeros((dim, dim))
    else:
        raise ScenarioError(f"{path}.q.kind: unknown covariance kind {qkind!r}")
    atoms = spec.get("atoms", [])
    ys = np.zeros((len(atoms), dim))
    rhos = np.zeros(len(atoms))
    for k, at in enumerate(atoms):
        ys[k] = np.asarray(_need(at, "y", f"{path}.atoms[{k}]"), dtype=np.float64)
        rhos[k] = float(_need(at, "rho", f"{path}.atoms[{k}]"))
    try:
        return LevyModel(dim=dim, drift_a=a, cov_Q=q, atom_y=ys, atom_rho=rhos)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


_TAGS = {
    "riskfree": None,
    "market_value": SchemeTag.MARKET_VALUE,
    "treasury": SchemeTag.TREASURY,
    "par": SchemeTag.PAR,
    "multiple_defaults": SchemeTag.MULTIPLE_DEFAULTS,
}


@dataclass
class Scenario:
    """Validated scenario: the normalized document plus derived objects."""

    raw: dict
    name: str
    grid: TimeGrid
    models: list
    vols: list
    f0: np.ndarray
    g0: np.ndarray
    scheme_tag: SchemeTag | None
    scheme: RecoveryScheme | None
    lam_off: np.ndarray | None
    lam_def_table: np.ndarray | None
    spread_coupled: bool
    gamma_table: np.ndarray | None
    deltas: np.ndarray | None
    initial_rating: int
    n_paths: int
    seed: int
    checkpoint_idx: np.ndarray
    maturity_idx: int
    n_export_paths: int
    chunk_size: int
    out_dir: str
    formats: tuple

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def n_live(self) -> int:
        return len(self.models) - 1

    def tables(self, seed: int | None = None, alpha_shift: float = 0.0,
               checkpoints: np.ndarray | None = None,
               antithetic: bool = False, anti_offset: int = 0) -> EngineTables:
        return build_tables(
            self.grid, self.models, self.vols, self.f0, self.g0, self.scheme,
            self.lam_off, self.deltas,
            seed=self.seed if seed is None else seed,
            checkpoints=self.checkpoint_idx if checkpoints is None else checkpoints,
            maturity_idx=self.maturity_idx,
            initial_rating=self.initial_rating,
            spread_coupled=self.spread_coupled,
            lam_def_table=self.lam_def_table,
            gamma_table=self.gamma_table,
            alpha_shift=alpha_shift,
            antithetic=antithetic, anti_offset=anti_offset,
        )


def parse(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: document must be a JSON object")
    name = str(doc.get("name", "scenario"))
    gspec = _need(doc, "grid", "scenario")
    grid = TimeGrid(float(_need(gspec, "t_star", "grid")),
                    int(_need(gspec, "n_steps", "grid")))

    scheme_spec = _need(doc, "scheme", "scenario")
    tag_name = _need(scheme_spec, "tag", "scheme")
    if tag_name not in _TAGS:
        raise ScenarioError(f"scheme.tag: unknown scheme {tag_name!r}")
    tag = _TAGS[tag_name]

    factors = _need(doc, "factors", "scenario")
    models = [_levy_model(_need(factors, "riskfree", "factors"), "factors.riskfree")]
    vols_spec = _need(doc, "vols", "scenario")
    vols = [_vol_surface(_need(vols_spec, "riskfree", "vols"), grid, "vols.riskfree", None)]
    curves_spec = _need(doc, "curves", "scenario")
    f0 = _curve_values(_need(curves_spec, "f0", "curves"), grid, "curves.f0")

    g0 = np.zeros((0, grid.n_nodes))
    lam_off = None
    lam_def_table = None
    gamma_table = None
    deltas = None
    spread_coupled = True
    scheme = None
    initial_rating = 0

    if tag is not None:
        rspec = _need(doc, "ratings", "scenario")
        k = int(_need(rspec, "k", "ratings"))
        if k < 2:
            raise ScenarioError("ratings.k: need k >= 2")
        n_live = k - 1
        rating_factors = _need(factors, "ratings", "factors")
        if len(rating_factors) != n_live:
            raise ScenarioError(f"factors.ratings: need {n_live} entries")
        for i, ms in enumerate(rating_factors):
            models.append(_levy_model(ms, f"factors.ratings[{i}]"))
        rating_vols = _need(vols_spec, "ratings", "vols")
        if len(rating_vols) != n_live:
            raise ScenarioError(f"vols.ratings: need {n_live} entries")
        for i, vs in enumerate(rating_vols):
            vols.append(_vol_surface(vs, grid, f"vols.ratings[{i}]", i))
        g0_spec = _need(curves_spec, "g0", "curves")
        if len(g0_spec) != n_live:
            raise ScenarioError(f"curves.g0: need {n_live} entries")
        g0 = np.stack([_curve_values(cs, grid, f"curves.g0[{i}]")
                       for i, cs in enumerate(g0_spec)])
        if np.any(np.diff(np.vstack([f0[None, :], g0]), axis=0) <= 0):
            import logging
            logging.getLogger("levyhjm.scenario").warning(
                "initial curves are not strictly ordered above the risk-free curve")

        initial_rating = int(rspec.get("initial_state", 1)) - 1
        if not (0 <= initial_rating < n_live):
            raise ScenarioError("ratings.initial_state: must name a live class (1-based)")

        lspec = _need(rspec, "lambda", "ratings")
        mode = _need(lspec, "mode", "ratings.lambda")
        n = grid.n_nodes
        if mode == "coupled":
            spread_coupled = True
            off = np.asarray(_need(lspec, "offdiag", "ratings.lambda"), dtype=np.float64)
            if off.shape != (n_live, n_live):
                raise ScenarioError(
                    f"ratings.lambda.offdiag: need ({n_live},{n_live}) live-class intensities")
            if np.any(np.diag(off) != 0.0):
                raise ScenarioError("ratings.lambda.offdiag: diagonal must be zero")
            if np.any(off < 0.0):
                raise ScenarioError("ratings.lambda.offdiag: intensities must be >= 0")
            lam_off = np.tile(off[None, :, :], (n, 1, 1))
        elif mode in ("constant", "piecewise"):
            spread_coupled = False
            if mode == "constant":
                mats = [np.asarray(_need(lspec, "matrix", "ratings.lambda"), dtype=np.float64)]
                breaks = np.zeros(0)
            else:
                breaks = np.asarray(_need(lspec, "breakpoints", "ratings.lambda"), dtype=np.float64)
                mats = [np.asarray(m, dtype=np.float64)
                        for m in _need(lspec, "matrices", "ratings.lambda")]
                if len(mats) != breaks.size + 1:
                    raise ScenarioError("ratings.lambda: need len(matrices) == len(breakpoints)+1")
            want = k if tag is not SchemeTag.MULTIPLE_DEFAULTS else n_live
            for m in mats:
                if m.shape != (want, want):
                    raise ScenarioError(f"ratings.lambda: matrices must be ({want},{want})")
            lam_off = np.zeros((n, n_live, n_live))
            lam_def_table = np.zeros((n, n_live))
            for s, t in enumerate(grid.times):
                pc = int(np.searchsorted(breaks, t, side="right"))
                mat = mats[pc]
                lam_off[s] = mat[:n_live, :n_live]
                for i in range(n_live):
                    lam_off[s, i, i] = 0.0
                if tag is not SchemeTag.MULTIPLE_DEFAULTS:
                    lam_def_table[s] = mat[:n_live, k - 1]
        else:
            raise ScenarioError(f"ratings.lambda.mode: unknown mode {mode!r}")

        if tag is SchemeTag.MULTIPLE_DEFAULTS:
            loss = float(_need(scheme_spec, "loss", "scheme"))
            gspec2 = scheme_spec.get("gamma", {"mode": "coupled"})
            gmode = _need(gspec2, "mode", "scheme.gamma")
            if gmode == "constant":
                gamma_table = np.full(grid.n_nodes, float(_need(gspec2, "value", "scheme.gamma")))
            elif gmode != "coupled":
                raise ScenarioError(f"scheme.gamma.mode: unknown mode {gmode!r}")
            scheme = RecoveryScheme(tag=tag, deltas=None, loss_L=loss)
            deltas = None
        else:
            deltas = np.asarray(_need(rspec, "deltas", "ratings"), dtype=np.float64)
            if deltas.ndim == 1 and deltas.shape != (n_live,):
                raise ScenarioError(f"ratings.deltas: need {n_live} entries")
            if np.any(deltas < 0.0) or np.any(deltas >= 1.0):
                raise ScenarioError("ratings.deltas: need 0 <= delta < 1")
            scheme = RecoveryScheme(tag=tag, deltas=deltas)

    mc = _need(doc, "mc", "scenario")
    if "seed" not in mc:
        raise ScenarioError("mc.seed: required (reproducibility contract)")
    seed = int(mc["seed"])
    if not (0 <= seed < 2**63):
        raise ScenarioError("mc.seed: must be a non-negative 63-bit integer")
    n_paths = int(_need(mc, "n_paths", "mc"))
    if n_paths < 1:
        raise ScenarioError("mc.n_paths: must be >= 1")
    maturity = float(mc.get("maturity", grid.horizon))
    try:
        maturity_idx = grid.index_of(maturity)
    except ValueError as exc:
        raise ScenarioError(f"mc.maturity: {exc}") from exc
    cps = mc.get("checkpoints")
    if cps is None:
        raise ScenarioError("mc.checkpoints: required")
    try:
        cp_idx = np.array(sorted(grid.index_of(float(t)) for t in cps), dtype=np.int64)
    except ValueError as exc:
        raise ScenarioError(f"mc.checkpoints: {exc}") from exc
    if len(set(cp_idx.tolist())) != len(cp_idx):
        raise ScenarioError("mc.checkpoints: must be distinct")
    if np.any(cp_idx < 1) or np.any(cp_idx > maturity_idx):
        raise ScenarioError("mc.checkpoints: must lie in (0, maturity]")

    out = doc.get("output", {})
    out_dir = str(out.get("directory", "out"))
    formats = tuple(out.get("formats", ["csv", "json"]))
    for f in formats:
        if f not in ("csv", "json"):
            raise ScenarioError(f"output.formats: unknown format {f!r}")

    return Scenario(
        raw=doc, name=name, grid=grid, models=models, vols=vols, f0=f0, g0=g0,
        scheme_tag=tag, scheme=scheme, lam_off=lam_off,
        lam_def_table=lam_def_table, spread_coupled=spread_coupled, gamma_table=gamma_table,
        deltas=deltas, initial_rating=initial_rating, n_paths=n_paths,
        seed=seed, checkpoint_idx=cp_idx, maturity_idx=maturity_idx,
        n_export_paths=int(mc.get("n_export_paths", 6)),
        chunk_size=int(mc.get("chunk_size", 8192)),
        out_dir=out_dir, formats=formats,
    )


def load(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario: invalid JSON ({exc})") from exc
    return parse(doc)


def load_bundled(name: str) -> Scenario:
    if name not in BUNDLED:
        raise ScenarioError(f"unknown bundled scenario {name!r}; have {BUNDLED}")
    text = resources.files("levyhjm.scenarios").joinpath(f"{name}.json").read_text()
    return parse(json.loads(text))
