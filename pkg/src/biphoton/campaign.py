"""Scenario pipeline (simulate, accumulate, project, analyze) and campaigns."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import ndimage

from . import __version__
from .analysis import (WidthEstimate, estimate_lc, estimate_sigma_k, estimate_sigma_r, regress_sigma_k2_vs_inv_lc2,
                       schmidt_from_widths, sigma_p_of, structure_correlation)
from .config import SCHEMA, PumpModel, Scenario, ScenarioMode, bundled_path, load_scenario
from .core import BiphotonGaussian, beta, reference_check, schmidt_theory, sigma_k_theory, sigma_r_theory
from .errors import ConfigurationError
from .io import TABLE_COLUMNS, write_bpfs, write_bpgm, write_pgm, write_projection_csv, write_rows_csv
from .pump import (IntensityImage, PumpMode, ensemble_statistics, far_field, make_ensemble, make_gaussian_beam)
from .reconstruction import (GammaAccumulator, JointDistribution, ProjectionImage, project_minus, project_sum,
                             project_xminus, project_xplus)
from .simulator import (FrameStack, ImagingMode, PairSamples, frame_counts, render_frames,
                        sample_pairs_momentum, sample_pairs_position, sample_pairs_static_speckle)

log = logging.getLogger(__name__)

PUMP_STREAM = 0x5EED


def _pump_seed(seed: int) -> int:
    # an independent stream, so pump screens never share keys with frame rendering
    return int(np.random.SeedSequence([seed, PUMP_STREAM]).generate_state(1)[0])


def model_widths(scenario: Scenario) -> tuple[float, float]:
    sr = scenario.sigma_r if scenario.sigma_r is not None else sigma_r_theory(scenario.crystal)
    sk = scenario.sigma_k if scenario.sigma_k is not None else sigma_k_theory(scenario.pump)
    return sr, sk


@dataclass
class PumpField:
    """Far-field pump intensity driving a scenario, with its coherence diagnostics."""

    intensity: IntensityImage
    ground_truth_lc: float
    farfield_lc: float = math.nan
    sigma_p: float = math.nan
    sigma_p0: float = math.nan


def _crop(image: IntensityImage, half: int) -> IntensityImage:
    n = image.values.shape[0]
    c = n // 2
    half = min(half, c)
    return IntensityImage(image.values[c - half:c + half, c - half:c + half], image.pitch, image.space)


def synthesize_pump(scenario: Scenario, workers: int = 1) -> PumpField:
    """Pump far field for diffuser-driven scenarios.

    The crystal-plane grid pitch is chosen so that far-field samples fall
    on the camera's momentum lattice: exactly one sample per pixel for
    static speckle, ``pad / grid`` samples per pixel (via zero padding)
    for the rotating diffuser.
    """
    dk, dky = scenario.camera.step()
    if not math.isclose(dk, dky, rel_tol=1e-12):
        raise ConfigurationError("pump synthesis needs square camera pixels")
    grid = scenario.pump_grid
    static = scenario.mode is ScenarioMode.STATIC_SPECKLE
    pad = grid if static else scenario.pump_pad
    dx = 2 * math.pi / (grid * dk)
    beam = make_gaussian_beam(scenario.pump.waist_w, grid, dx)
    if static:
        ens = make_ensemble(beam, PumpMode.STATIC_SPECKLE, scenario.diffuser, seed=_pump_seed(scenario.seed))
    elif scenario.diffuser is None:
        ens = make_ensemble(beam, PumpMode.COHERENT)
    else:
        ens = make_ensemble(beam, PumpMode.ROTATING, scenario.diffuser, scenario.realizations,
                            seed=_pump_seed(scenario.seed))
    image, gt = ensemble_statistics(ens, workers=workers, pad_to=pad)
    out = PumpField(image, gt)
    if not static:
        # far-field route to the coherence length, fitted on the central region
        ref = far_field(beam, pad_to=pad)
        half = max(64, pad // 8)
        out.sigma_p0 = sigma_p_of(_crop(IntensityImage(np.abs(ref.values) ** 2, ref.pitch), half))
        out.sigma_p = sigma_p_of(_crop(image, half))
        if scenario.diffuser is not None:
            out.farfield_lc = estimate_lc(_crop(image, half), out.sigma_p0)
    return out


def _empty_pairs(mode) -> PairSamples:
    return PairSamples(np.empty((0, 2)), np.empty((0, 2)), mode)


def simulate(scenario: Scenario, workers: int = 1) -> tuple[FrameStack, PumpField | None]:
    """Render the scenario's frame stack; deterministic in (scenario, seed)."""
    spec = scenario.camera
    counts = frame_counts(scenario.frames, spec, scenario.seed, scenario.fixed_counts)
    n = int(counts.sum())
    sr, sk = model_widths(scenario)
    pump_field = None
    if scenario.uses_pump_field:
        pump_field = synthesize_pump(scenario, workers)
    if n == 0:
        pairs = _empty_pairs(scenario.imaging)
    elif scenario.mode is ScenarioMode.POSITION:
        pairs = sample_pairs_position(n, sr, scenario.pump, beta(scenario.crystal.alpha), seed=scenario.seed)
    elif pump_field is not None:
        pairs = sample_pairs_static_speckle(n, pump_field.intensity, sr, seed=scenario.seed,
                                            jitter=scenario.mode is not ScenarioMode.STATIC_SPECKLE)
    else:
        pairs = sample_pairs_momentum(n, BiphotonGaussian(sr, sk), scenario.seed)
    return render_frames(pairs, counts, spec, scenario.seed), pump_field


def reconstruct(stack: FrameStack, reproducible: bool = False) -> JointDistribution:
    acc = GammaAccumulator(stack.spec, stack.mode).update(stack.frames)
    if reproducible and not acc.exact:
        raise ConfigurationError("frame values too large for exact accumulation; "
                                 "results could depend on summation order")
    return acc.finalize()


@dataclass
class Analysis:
    sum: ProjectionImage
    minus: ProjectionImage
    conditional: ProjectionImage
    estimate: WidthEstimate
    quantity: str


def analyze(scenario: Scenario, gamma: JointDistribution) -> Analysis:
    kw = dict(include_diagonal=scenario.include_diagonal)
    S, M = project_sum(gamma, **kw), project_minus(gamma, **kw)
    fit_kw = dict(mask_center=scenario.mask_center, pixel_correction=scenario.resolved_pixel_correction,
                  rounds=scenario.rounds)
    if gamma.mode is ImagingMode.POSITION:
        X = project_xminus(gamma, **kw)
        est = estimate_sigma_r(M, beta(scenario.crystal.alpha), partner=S, **fit_kw)
        return Analysis(S, M, X, est, "sigma_r")
    X = project_xplus(gamma, **kw)
    est = estimate_sigma_k(S, partner=M, **fit_kw)
    return Analysis(S, M, X, est, "sigma_k")


def _sample(image: IntensityImage, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    """Bilinear samples of a centred image at coordinates (kx, ky)."""
    n = image.values.shape[0]
    cols = kx / image.pitch + n // 2
    rows = ky / image.pitch + n // 2
    R, C = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(image.values, [R, C], order=1, mode="constant")


def coherence_transfer(result: Analysis, stack: FrameStack, pump: PumpField, half: int = 10,
                       highpass_sigma: float = 3.0) -> dict:
    """Fine-structure correlation of the SUM projection and of the mean frame with the pump far field.

    Both comparisons use the central (2 half + 1)^2 window around k = 0.
    """
    S = result.sum
    ic, jc = S.center_index()
    sl = (slice(ic - half, ic + half + 1), slice(jc - half, jc + half + 1))
    x, y = S.axes()
    ref_sum = _sample(pump.intensity, x[sl[1]], y[sl[0]])
    mask = S.mask[sl].copy()
    mask[half, half] = True  # central bin is excluded from fits as well
    r_sum = structure_correlation(S.values[sl], ref_sum, highpass_sigma, mask=mask)

    kx, ky = stack.spec.axes()
    u0, v0 = int(np.argmin(np.abs(kx))), int(np.argmin(np.abs(ky)))
    fl = (slice(v0 - half, v0 + half + 1), slice(u0 - half, u0 + half + 1))
    ref_frame = _sample(pump.intensity, kx[fl[1]], ky[fl[0]])
    r_frame = structure_correlation(stack.mean_frame()[fl], ref_frame, highpass_sigma)
    return {"r_sum": r_sum, "r_mean_frame": r_frame, "window": 2 * half + 1, "highpass_sigma_px": highpass_sigma}


@dataclass
class ScenarioResult:
    scenario: Scenario
    analysis: Analysis
    pump: PumpField | None
    stack: FrameStack | None = None
    gamma: JointDistribution | None = None
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.analysis.estimate.value


def run_scenario(scenario: Scenario, out_dir=None, workers: int = 1, reproducible: bool = False,
                 keep: bool = True) -> ScenarioResult:
    t0 = time.perf_counter()
    stack, pump = simulate(scenario, workers)
    t1 = time.perf_counter()
    gamma = reconstruct(stack, reproducible)
    t2 = time.perf_counter()
    result = analyze(scenario, gamma)
    t3 = time.perf_counter()
    res = ScenarioResult(scenario, result, pump, timings={"simulate_s": t1 - t0, "reconstruct_s": t2 - t1,
                                                          "analyze_s": t3 - t2})
    if scenario.mode is ScenarioMode.STATIC_SPECKLE:
        res.extra["coherence_transfer"] = coherence_transfer(result, stack, pump)
    if out_dir is not None:
        res.files = write_scenario_artifacts(res, stack, gamma, Path(out_dir))
    if keep:
        res.stack, res.gamma = stack, gamma
    log.info("%s: %s = %.6g (%.1f s)", scenario.name, result.quantity, result.estimate.value, t3 - t0)
    return res


def write_scenario_artifacts(res: ScenarioResult, stack, gamma, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    name = res.scenario.name
    a = res.analysis
    files = {
        "stack": out / f"{name}.bpfs",
        "gamma": out / f"{name}.bpgm",
        "sum_csv": out / f"{name}_sum.csv",
        "minus_csv": out / f"{name}_minus.csv",
        "sum_pgm": out / f"{name}_sum.pgm",
        "minus_pgm": out / f"{name}_minus.pgm",
        "conditional_pgm": out / f"{name}_{a.conditional.kind.value.lower()}.pgm",
        "mean_frame_pgm": out / f"{name}_mean_frame.pgm",
    }
    write_bpfs(files["stack"], stack)
    write_bpgm(files["gamma"], gamma)
    write_projection_csv(files["sum_csv"], a.sum)
    write_projection_csv(files["minus_csv"], a.minus)
    write_pgm(files["sum_pgm"], np.where(a.sum.mask, np.nan, a.sum.values), lo=0.0)
    write_pgm(files["minus_pgm"], np.where(a.minus.mask, np.nan, a.minus.values), lo=0.0)
    write_pgm(files["conditional_pgm"], np.where(a.conditional.mask, np.nan, a.conditional.values), lo=0.0)
    write_pgm(files["mean_frame_pgm"], stack.mean_frame())
    if res.pump is not None:
        files["pump_pgm"] = out / f"{name}_pump_farfield.pgm"
        write_pgm(files["pump_pgm"], _crop(res.pump.intensity, 64).values, lo=0.0)
    return {k: str(v) for k, v in files.items()}


# --- reporting -----------------------------------------------------------------

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else (None if math.isnan(v) else v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    return v


def scenario_record(res: ScenarioResult, with_hashes: bool = True) -> dict:
    s = res.scenario
    est = res.analysis.estimate
    rec = {
        "name": s.name,
        "seed": s.seed,
        "config": {k: (v if not isinstance(v, float) or math.isfinite(v) else "inf")
                   for k, v in s.values.items() if v is not None},
        "quantity": res.analysis.quantity,
        "value": est.value,
        "uncertainty": est.uncertainty,
        "fitted_width": est.fitted,
        "unmasked_width": est.unmasked,
        "partner_width": est.partner_width,
        "converged": est.converged,
        "notes": est.notes,
        "extra": res.extra,
    }
    if res.pump is not None:
        rec["pump"] = {"ground_truth_lc": res.pump.ground_truth_lc, "farfield_lc": res.pump.farfield_lc,
                       "sigma_p": res.pump.sigma_p, "sigma_p0": res.pump.sigma_p0}
    if res.files:
        rec["files"] = {k: {"path": Path(p).name, **({"sha256": sha256(p)} if with_hashes else {})}
                        for k, p in res.files.items()}
    return _jsonable(rec)


def write_manifest(path, payload: dict, reproducible: bool = False) -> None:
    """JSON manifest; timing and host details are left out under ``reproducible``."""
    doc = {"tool": "biphoton", "version": __version__}
    if not reproducible:
        doc.update(python=platform.python_version(), numpy=np.__version__, scipy=scipy.__version__)
    doc.update(_jsonable(payload))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


# --- campaigns ---------------------------------------------------------------------

# (name, coherence length in um, diffuser layers); layers only shape the screen stack
TABLE1_SETTINGS = (("coherent", math.inf, 1), ("diffuser_1", 122.0, 1), ("diffuser_2", 59.0, 2),
                   ("diffuser_3", 41.0, 3))

REGRESSION_COLUMNS = ["scenario", "lc_um", "lc_source", "inv_lc2_per_mm2", "sigma_k_rad_per_mm",
                      "sigma_k2_rad2_per_mm2"]
REGRESSION_FIT_COLUMNS = ["slope", "slope_stderr", "intercept_rad2_per_mm2", "r_squared", "n"]


@dataclass
class CampaignReport:
    rows: list
    regression: object
    regression_points: list
    results: dict
    manifest: dict
    files: dict = field(default_factory=dict)


def _run_many(scenarios, out_dir, workers, reproducible):
    """Run scenarios (up to ``workers`` at once); results keyed and ordered by name."""
    inner = 1 if workers > 1 else workers

    def one(s):
        return run_scenario(s, out_dir, workers=inner, reproducible=reproducible, keep=False)

    if workers <= 1:
        return {s.name: one(s) for s in scenarios}
    with ThreadPoolExecutor(workers) as pool:
        return dict(zip([s.name for s in scenarios], pool.map(one, scenarios)))


def table1_scenarios(base: Scenario, frames: int | None = None) -> list[tuple[str, Scenario, Scenario]]:
    out = []
    for i, (name, lc, layers) in enumerate(TABLE1_SETTINGS):
        common = {"pump.lc_um": lc, "diffuser.layers": layers}
        if frames is not None:
            common["scenario.frames"] = frames
        mom = base.with_values({**common, "scenario.name": f"{name}_momentum", "scenario.mode": "momentum",
                                "scenario.seed": base.seed + 2 * i})
        pos = base.with_values({**common, "scenario.name": f"{name}_position", "scenario.mode": "position",
                                "scenario.seed": base.seed + 2 * i + 1})
        out.append((name, mom, pos))
    return out


def _lc_abscissa(res: ScenarioResult) -> tuple[float, str]:
    s = res.scenario
    if res.pump is not None and s.pump_model is PumpModel.DIFFUSER:
        return res.pump.ground_truth_lc, "ground_truth"
    return s.pump.coherence_length_lc, "nominal"


def _regression_rows(pairs):
    """pairs: (scenario name, lc in m, lc source, sigma_k in rad/m)."""
    rows, points = [], []
    for name, lc, source, sk in pairs:
        lc, sk = float(lc), float(sk)
        points.append((lc, sk))
        rows.append({"scenario": name, "lc_um": lc * 1e6, "lc_source": source,
                     "inv_lc2_per_mm2": 0.0 if math.isinf(lc) else 1.0 / (lc * 1e3) ** 2,
                     "sigma_k_rad_per_mm": sk / 1e3, "sigma_k2_rad2_per_mm2": (sk / 1e3) ** 2})
    return rows, points


def _regression_fit_row(reg) -> dict:
    # slope is dimensionless; the intercept carries (rad/mm)^2
    return {"slope": reg.slope, "slope_stderr": reg.slope_stderr, "intercept_rad2_per_mm2": reg.intercept / 1e6,
            "r_squared": reg.r_squared, "n": reg.n}


def run_table1(out_dir, base: Scenario | None = None, workers: int = 1, reproducible: bool = False,
               frames: int | None = None, seed: int | None = None) -> CampaignReport:
    """Coherent plus three diffuser settings, a momentum and a position run each.

    Emits table1.csv, regression.csv, regression_fit.csv, per-scenario
    artifacts (BPFS, BPGM, projection CSV/PGM) and manifest.json in ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if base is None:
        base = load_scenario(bundled_path("table1.cfg"))
    if seed is not None:
        base = base.with_values({"scenario.seed": seed})
    plan = table1_scenarios(base, frames)
    scenarios = [s for _, m, p in plan for s in (m, p)]
    results = _run_many(scenarios, out, workers, reproducible)

    rows, reg_pairs = [], []
    for name, mom, pos in plan:
        rm, rp = results[mom.name], results[pos.name]
        ek, er = rm.analysis.estimate, rp.analysis.estimate
        if ek.converged and er.converged:
            K = schmidt_from_widths(er.value, ek.value, er.uncertainty, ek.uncertainty)
            k_exp, k_err = K.k_value, K.k_uncertainty
        else:
            k_exp = k_err = math.nan
        rows.append({"scenario": name, "lc_um": mom.pump.coherence_length_lc * 1e6,
                     "sigma_k_rad_per_mm": ek.value / 1e3, "sigma_r_um": er.value * 1e6,
                     "K_exp": k_exp, "K_exp_err": k_err, "K_theory": schmidt_theory(mom.crystal, mom.pump)})
        lc, source = _lc_abscissa(rm)
        reg_pairs.append((name, lc, source, ek.value))

    reg_rows, points = _regression_rows(reg_pairs)
    reg = regress_sigma_k2_vs_inv_lc2([p for p in points if math.isfinite(p[1])])
    files = {"table1": out / "table1.csv", "regression": out / "regression.csv",
             "regression_fit": out / "regression_fit.csv", "manifest": out / "manifest.json"}
    write_rows_csv(files["table1"], rows, TABLE_COLUMNS)
    write_rows_csv(files["regression"], reg_rows, REGRESSION_COLUMNS)
    write_rows_csv(files["regression_fit"], [_regression_fit_row(reg)], REGRESSION_FIT_COLUMNS)
    manifest = {
        "campaign": "table1",
        "reproducible": reproducible,
        "scenarios": [scenario_record(results[s.name]) for s in scenarios],
        "outputs": {k: {"path": p.name, "sha256": sha256(p)} for k, p in files.items() if k != "manifest"},
        "theory_vs_published": [dataclasses.asdict(c) for c in reference_check(base.crystal, base.pump.waist_w)],
    }
    if not reproducible:
        manifest["timings"] = {n: r.timings for n, r in results.items()}
    write_manifest(files["manifest"], manifest, reproducible)
    return CampaignReport(rows, reg, reg_rows, results, manifest, {k: str(v) for k, v in files.items()})


SWEEP_COLUMNS = ["scenario", "key", "value", "quantity", "estimate", "uncertainty", "unmasked", "converged"]


def run_sweep(base: Scenario, key: str, values: list, out_dir, workers: int = 1,
              reproducible: bool = False) -> CampaignReport:
    """Repeat a scenario over values of one config key; regression when sweeping pump.lc_um."""
    if key not in SCHEMA:
        raise ConfigurationError(f"unknown sweep key {key!r}")
    if len(values) < 1:
        raise ConfigurationError("sweep needs at least one value")
    parser = SCHEMA[key][0]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = []
    for i, raw in enumerate(values):
        try:
            typed = parser(str(raw))
        except ValueError as exc:
            raise ConfigurationError(f"bad sweep value {raw!r} for {key}: {exc}") from None
        scenarios.append(base.with_values({key: typed, "scenario.name": f"{base.name}_{i:02d}",
                                           "scenario.seed": base.seed + i}))
    results = _run_many(scenarios, out, workers, reproducible)
    rows = []
    for s, raw in zip(scenarios, values):
        r = results[s.name]
        e = r.analysis.estimate
        rows.append({"scenario": s.name, "key": key, "value": str(raw), "quantity": r.analysis.quantity,
                     "estimate": e.value, "uncertainty": e.uncertainty, "unmasked": e.unmasked,
                     "converged": int(e.converged)})
    files = {"sweep": out / "sweep.csv", "manifest": out / "manifest.json"}
    write_rows_csv(files["sweep"], rows, SWEEP_COLUMNS)
    reg, reg_rows = None, []
    if key == "pump.lc_um" and base.mode is ScenarioMode.MOMENTUM:
        pairs = []
        for s in scenarios:
            lc, source = _lc_abscissa(results[s.name])
            pairs.append((s.name, lc, source, results[s.name].value))
        reg_rows, points = _regression_rows(pairs)
        if len(points) >= 3:
            reg = regress_sigma_k2_vs_inv_lc2(points)
            files["regression"] = out / "regression.csv"
            files["regression_fit"] = out / "regression_fit.csv"
            write_rows_csv(files["regression"], reg_rows, REGRESSION_COLUMNS)
            write_rows_csv(files["regression_fit"], [_regression_fit_row(reg)], REGRESSION_FIT_COLUMNS)
    manifest = {"campaign": "sweep", "key": key, "values": [str(v) for v in values],
                "reproducible": reproducible,
                "scenarios": [scenario_record(results[s.name]) for s in scenarios],
                "outputs": {k: {"path": p.name, "sha256": sha256(p)} for k, p in files.items() if k != "manifest"}}
    write_manifest(files["manifest"], manifest, reproducible)
    return CampaignReport(rows, reg, reg_rows, results, manifest, {k: str(v) for k, v in files.items()})
