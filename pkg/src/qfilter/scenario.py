"""Declarative scenarios: TOML configuration, trajectory dispatch and run manifests."""
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigError, NumericError

WORKERS_ENV = "QFILTER_WORKERS"

KINDS = ("qubit_homodyne", "free_particle", "classical_ou", "toyfock_oracle", "custom")

# name -> (default, lower, upper) for numeric parameters; strings list the allowed values
_PARAMS = {
    "qubit_homodyne": {
        "omega": (1.0, 0.0, 1e3), "kappa": (1.0, 1e-12, 1e3),
        "theta": (math.pi / 2, 0.0, math.pi), "phi": (0.0, 0.0, 2 * math.pi),
        "scheme": ("kraus", ("kraus", "explicit")),
    },
    "free_particle": {
        "m": (1.0, 1e-6, 1e6), "lam": (2.0, 1e-6, 1e6),
        "q0": (0.0, -1e6, 1e6), "p0": (0.0, -1e6, 1e6),
    },
    "classical_ou": {
        "a_lin": (1.0, -1e3, 1e3), "sigma": (1.0, 1e-6, 1e3), "g_lin": (1.0, -1e3, 1e3),
        "P0": (0.5, 1e-6, 1e6), "z0": (0.0, -1e6, 1e6), "m0": (0.0, -1e6, 1e6),
        "z_min": (-6.0, -1e6, 1e6), "z_max": (6.0, -1e6, 1e6),
        "n_cells": (600, 8, 100000), "n_particles": (0, 0, 10 ** 6),
    },
    "toyfock_oracle": {
        "omega": (1.0, 0.0, 1e3), "kappa": (1.0, 1e-12, 1e3),
        "dt_list": ([0.1, 0.05, 0.025], 1e-4, 1.0),
    },
    "custom": {
        "H": (None, None, None), "L": (None, None, None), "psi0": (None, None, None),
        "scheme": ("kraus", ("kraus", "explicit")),
    },
}

SELECTORS = {
    "qubit_homodyne": ("bloch_x", "bloch_y", "bloch_z", "purity", "record", "log_likelihood"),
    "free_particle": ("q_hat", "p_hat", "posterior_varq", "posterior_varp", "posterior_cov",
                      "record", "log_density"),
    "classical_ou": ("signal", "record", "kb_mean", "kb_var", "zakai_mean", "zakai_var",
                     "zakai_mass", "pf_mean"),
    "toyfock_oracle": ("errors",),
    "custom": ("purity", "record", "log_likelihood", "populations"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; build it with :func:`load_config` or :func:`parse_config`."""

    kind: str
    seed: int
    n_trajectories: int
    T: float
    dt: float
    params: dict
    selectors: tuple = ()
    svg: bool = False
    name: str = "scenario"

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "seed": self.seed,
                "n_trajectories": self.n_trajectories,
                "time": {"T": self.T, "dt": self.dt},
                "model": _jsonable(self.params),
                "output": {"selectors": list(self.selectors), "svg": self.svg}}

    @property
    def digest(self):
        return sha256_bytes(canonical_json(self.to_dict()).encode())

    def with_param(self, name, value):
        """Copy with one parameter replaced (``T``, ``dt``, ``seed`` or a model key)."""
        raw = self.to_dict()
        if name in ("T", "dt"):
            raw["time"][name] = value
        elif name in ("seed", "n_trajectories"):
            raw[name] = value
        else:
            raw["model"][name] = value
        return parse_config(raw)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            # the table form read back by the matrix parser
            return {"re": x.real.tolist(), "im": x.imag.tolist()}
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    return sha256_bytes(Path(path).read_bytes())


def _parse_matrix(entry, name, errors, vector=False):
    """Real nested lists, or a table ``{re = ..., im = ...}``."""
    try:
        if isinstance(entry, dict):
            extra = set(entry) - {"re", "im"}
            if extra:
                raise ValueError(f"unexpected keys {sorted(extra)}")
            re = np.asarray(entry.get("re", 0.0), dtype=float)
            im = np.asarray(entry.get("im", np.zeros_like(re)), dtype=float)
            arr = re + 1j * im
        else:
            arr = np.asarray(entry, dtype=complex)
    except (TypeError, ValueError) as exc:
        errors.append(f"model.{name}: not a numeric array ({exc})")
        return None
    ndim = 1 if vector else 2
    if arr.ndim != ndim or (not vector and arr.shape[0] != arr.shape[1]) or arr.shape[0] < 2:
        errors.append(f"model.{name}: expected a {'vector' if vector else 'square matrix'} "
                      f"of size >= 2, got shape {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"model.{name}: non-finite entries")
        return None
    return arr


def _check_number(value, name, lo, hi, integer, errors):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{name}: expected a number, got {value!r}")
        return None
    if integer and int(value) != value:
        errors.append(f"{name}: expected an integer, got {value!r}")
        return None
    if not math.isfinite(value) or not (lo <= value <= hi):
        errors.append(f"{name}: {value!r} outside [{lo}, {hi}]")
        return None
    return int(value) if integer else float(value)


def parse_config(raw):
    """Validate a scenario mapping; every problem is reported in one :class:`ConfigError`."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a table")
    allowed_top = {"kind", "name", "seed", "n_trajectories", "time", "model", "output"}
    extra = set(raw) - allowed_top
    if extra:
        errors.append(f"unknown top-level keys {sorted(extra)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: expected one of {list(KINDS)}, got {kind!r}")
    name = raw.get("name", kind)
    if not isinstance(name, str) or not name:
        errors.append("name: expected a non-empty string")
    seed = _check_number(raw.get("seed", 0), "seed", 0, 2 ** 63 - 1, True, errors)
    n_traj = _check_number(raw.get("n_trajectories", 1), "n_trajectories", 0, 100000, True, errors)

    time = raw.get("time", {})
    if not isinstance(time, dict):
        errors.append("time: expected a table")
        time = {}
    extra = set(time) - {"T", "dt"}
    if extra:
        errors.append(f"time: unknown keys {sorted(extra)}")
    T = _check_number(time.get("T", 1.0), "time.T", 1e-9, 1e5, False, errors)
    dt = _check_number(time.get("dt", 1e-3), "time.dt", 1e-7, 1e3, False, errors)
    if T is not None and dt is not None:
        if dt > T:
            errors.append("time.dt exceeds time.T")
        elif abs(round(T / dt) * dt - T) > 1e-9 * T:
            errors.append("time.T must be a multiple of time.dt")
        elif T / dt > 5e6:
            errors.append("more than 5e6 time steps")

    model = raw.get("model", {})
    if not isinstance(model, dict):
        errors.append("model: expected a table")
        model = {}
    schema = _PARAMS[kind]
    extra = set(model) - set(schema)
    if extra:
        errors.append(f"model: unknown keys {sorted(extra)} for kind {kind!r}")
    params = {}
    for key, rule in schema.items():
        if kind == "custom" and key in ("H", "L", "psi0"):
            if key not in model:
                errors.append(f"model.{key}: required for kind 'custom'")
                continue
            params[key] = _parse_matrix(model[key], key, errors, vector=key == "psi0")
            continue
        default = rule[0]
        value = model.get(key, default)
        if isinstance(rule[1], tuple):
            if value not in rule[1]:
                errors.append(f"model.{key}: expected one of {list(rule[1])}, got {value!r}")
            params[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list) or len(value) < 3:
                errors.append(f"model.{key}: expected a list of at least three numbers")
                continue
            vals = [_check_number(v, f"model.{key}", rule[1], rule[2], False, errors) for v in value]
            params[key] = vals
        else:
            params[key] = _check_number(value, f"model.{key}", rule[1], rule[2],
                                        isinstance(default, int), errors)
    if kind == "custom" and all(params.get(k) is not None for k in ("H", "L", "psi0")):
        d = params["H"].shape[0]
        if params["L"].shape[0] != d or params["psi0"].shape[0] != d:
            errors.append("model: H, L and psi0 dimensions differ")
        elif np.linalg.norm(params["H"] - params["H"].conj().T) > 1e-12:
            errors.append("model.H: not Hermitian")
        elif np.linalg.norm(params["psi0"]) == 0:
            errors.append("model.psi0: zero vector")
    if kind == "classical_ou" and params.get("z_min") is not None and params.get("z_max") is not None:
        if params["z_min"] >= params["z_max"]:
            errors.append("model.z_min must be below model.z_max")

    output = raw.get("output", {})
    if not isinstance(output, dict):
        errors.append("output: expected a table")
        output = {}
    extra = set(output) - {"selectors", "svg"}
    if extra:
        errors.append(f"output: unknown keys {sorted(extra)}")
    selectors = output.get("selectors", [])
    if not isinstance(selectors, list) or not all(isinstance(s, str) for s in selectors):
        errors.append("output.selectors: expected a list of strings")
        selectors = []
    unknown = [s for s in selectors if s not in SELECTORS[kind]]
    if unknown:
        errors.append(f"output.selectors: unknown {unknown}; available {list(SELECTORS[kind])}")
    svg = output.get("svg", False)
    if not isinstance(svg, bool):
        errors.append("output.svg: expected true or false")
    if errors:
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(errors))
    return ScenarioConfig(kind, seed, n_traj, T, dt, params, tuple(selectors), svg, name)


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_config(raw)


# trajectory runners ----------------------------------------------------------------

def _qubit_model(omega, kappa):
    from .belavkin import MarkovModel
    from .hilbert import SIGMA_X, SIGMA_Z
    return MarkovModel(0.5 * omega * SIGMA_X, math.sqrt(kappa) * SIGMA_Z)


def _qubit_state(theta, phi):
    psi = np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])
    return np.outer(psi, psi.conj())


def _cumulative(increments):
    return np.concatenate([[0.0], np.cumsum(increments)])


def _run_quantum(model, rho0, cfg, stream_id, observables):
    from .belavkin import simulate_record
    from .stochastic import TimeGrid
    grid = TimeGrid.from_horizon(cfg.T, cfg.dt)
    record, traj = simulate_record(model, rho0, grid, cfg.seed, stream_id=stream_id, store=False,
                                   observables=observables, scheme=cfg.params["scheme"])
    out = {"record": _cumulative(record), "purity": traj.purity,
           "log_likelihood": traj.log_likelihood}
    out.update(traj.observables)
    return out


def _traj_qubit(cfg, j):
    from .hilbert import SIGMA_X, SIGMA_Y, SIGMA_Z
    p = cfg.params
    obs = {"bloch_x": SIGMA_X, "bloch_y": SIGMA_Y, "bloch_z": SIGMA_Z}
    return _run_quantum(_qubit_model(p["omega"], p["kappa"]), _qubit_state(p["theta"], p["phi"]),
                        cfg, j, obs)


def _traj_custom(cfg, j):
    from .belavkin import MarkovModel
    p = cfg.params
    psi = p["psi0"] / np.linalg.norm(p["psi0"])
    d = psi.size
    obs = {f"population_{i}": np.diag(np.eye(d)[i]).astype(complex) for i in range(d)}
    return _run_quantum(MarkovModel(p["H"], p["L"]), np.outer(psi, psi.conj()), cfg, j, obs)


def _traj_free_particle(cfg, j):
    from .gaussian import free_particle_model, initial_belief, simulate_gaussian_record
    from .stochastic import TimeGrid
    p = cfg.params
    grid = TimeGrid.from_horizon(cfg.T, cfg.dt)
    record, traj = simulate_gaussian_record(free_particle_model(p["m"], p["lam"]),
                                            initial_belief((p["p0"], p["q0"])), grid,
                                            cfg.seed, stream_id=j)
    return {"q_hat": traj.theta[:, 1], "p_hat": traj.theta[:, 0],
            "posterior_varq": traj.p[:, 1, 1], "posterior_varp": traj.p[:, 0, 0],
            "posterior_cov": traj.p[:, 0, 1], "record": _cumulative(record),
            "log_density": traj.log_density}


def _traj_classical(cfg, j):
    from .classical import (cell_grid, gaussian_density, kalman_bucy_classical, ornstein_uhlenbeck,
                            run_particle_filter, run_zakai_pde, simulate_signal, ParticleEnsemble)
    from .stochastic import TimeGrid, stream_generator
    p = cfg.params
    grid = TimeGrid.from_horizon(cfg.T, cfg.dt)
    model = ornstein_uhlenbeck(p["a_lin"], p["sigma"], p["g_lin"])
    z, dy = simulate_signal(model, p["z0"], grid, cfg.seed, stream_id=j)
    m, P = kalman_bucy_classical(p["a_lin"], p["sigma"], p["g_lin"], p["P0"], grid, dy, p["m0"])
    d0 = gaussian_density(cell_grid(p["z_min"], p["z_max"], p["n_cells"]), p["m0"], p["P0"])
    zm, zv, mass, _ = run_zakai_pde(d0, model, dy, grid.dt)
    out = {"signal": z, "record": _cumulative(dy), "kb_mean": m, "kb_var": P,
           "zakai_mean": zm, "zakai_var": zv, "zakai_mass": mass}
    n = p["n_particles"]
    if n > 0:
        # particle streams sit above the signal streams of every trajectory
        rng = stream_generator(cfg.seed, 2 * cfg.n_trajectories + 2 * j)
        x0 = p["m0"] + math.sqrt(p["P0"]) * rng.standard_normal(n)
        ens = ParticleEnsemble(x0, np.full(n, 1.0 / n))
        out["pf_mean"], _ = run_particle_filter(ens, model, dy, grid.dt, seed=cfg.seed,
                                                stream_id=2 * cfg.n_trajectories + 2 * j + 1)
    else:
        out["pf_mean"] = np.full(grid.n_steps + 1, np.nan)
    return out


_RUNNERS = {"qubit_homodyne": _traj_qubit, "free_particle": _traj_free_particle,
            "classical_ou": _traj_classical, "custom": _traj_custom}


def run_trajectory(cfg, j):
    """Series of trajectory ``j``; its noise is stream ``(cfg.seed, j)``."""
    try:
        return _RUNNERS[cfg.kind](cfg, j)
    except NumericError as exc:
        raise NumericError(exc.base_message, step=exc.step, trajectory=j) from exc


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return n


def run_trajectories(cfg, workers=None):
    """All trajectories in index order, dispatched to a process pool when ``workers > 1``."""
    workers = worker_count() if workers is None else workers
    idx = list(range(cfg.n_trajectories))
    if workers <= 1 or len(idx) <= 1:
        return [run_trajectory(cfg, j) for j in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trajectory, [cfg] * len(idx), idx))


# summaries ---------------------------------------------------------------------

def _summary_qubit(cfg, trajs):
    fin = lambda key: [float(t[key][-1]) for t in trajs if key in t]
    out = {"final_purity_mean": float(np.mean(fin("purity")))}
    for key in ("bloch_x", "bloch_y", "bloch_z"):
        if trajs and key in trajs[0]:
            out[f"final_{key}_mean"] = float(np.mean(fin(key)))
    return out


def _summary_free_particle(cfg, trajs):
    from .gaussian import (free_particle_model, omega_from_p, omega_limit, solve_riccati,
                           stationary_invariants)
    from .stochastic import TimeGrid
    p = cfg.params
    grid = TimeGrid.from_horizon(cfg.T, cfg.dt)
    pT = solve_riccati(free_particle_model(p["m"], p["lam"]), np.eye(2), grid)[-1]
    om = omega_from_p(pT)
    om_inf = omega_limit(p["m"], p["lam"])
    prod, corr = stationary_invariants(pT)
    return {"omega_T": om, "omega_limit": om_inf, "omega_error": float(abs(om - om_inf)),
            "dispersion_product": float(prod), "correlation": float(corr),
            "posterior_varq_T": float(pT[1, 1]), "posterior_varp_T": float(pT[0, 0]),
            # both candidate stationary dispersion sets; only their product is unambiguous
            "dispersion_candidates": {
                "riccati": [float(1 / (2 * om_inf.real)), float(2 * abs(om_inf) ** 2 / om_inf.real)],
                "closed_form": [float(np.sqrt(2 * p["lam"] * p["m"])),
                                float(np.sqrt(2 / (p["lam"] * p["m"])))]},
            "final_q_hat": [float(t["q_hat"][-1]) for t in trajs]}


def _summary_classical(cfg, trajs):
    from .classical import kalman_bucy_stationary
    p = cfg.params
    rmse = [float(np.sqrt(np.mean((t["zakai_mean"] - t["kb_mean"]) ** 2))) for t in trajs]
    out = {"kb_stationary_variance": float(kalman_bucy_stationary(p["a_lin"], p["sigma"], p["g_lin"])),
           "kb_final_variance": float(trajs[0]["kb_var"][-1]),
           "zakai_kb_mean_rmse": rmse,
           "zakai_final_mass": [float(t["zakai_mass"][-1]) for t in trajs]}
    if p["n_particles"] > 0:
        out["pf_zakai_final_gap"] = [float(t["pf_mean"][-1] - t["zakai_mean"][-1]) for t in trajs]
    return out


def _run_toyfock(cfg):
    from .hilbert import SIGMA_X, SIGMA_Z
    from .toyfock import compare_with_filter
    p = cfg.params
    res = compare_with_filter(0.5 * p["omega"] * SIGMA_X, math.sqrt(p["kappa"]) * SIGMA_Z,
                              np.array([1.0, 1.0]) / math.sqrt(2), p["dt_list"], cfg.T,
                              cfg.n_trajectories, seed=cfg.seed)
    table = {"dt": np.asarray(res.dt_list, dtype=float), "errors": np.asarray(res.errors)}
    return table, {"dt_list": table["dt"].tolist(), "errors": table["errors"].tolist(),
                   "observed_order": float(res.order)}


# manifest --------------------------------------------------------------------------

@dataclass
class RunManifest:
    """Inputs and content digests of one scenario run."""

    config_digest: str
    seed: int
    tool_version: str
    started: str
    finished: str = ""
    trajectories: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def to_dict(self):
        return {"config_digest": self.config_digest, "seed": self.seed,
                "tool_version": self.tool_version, "started": self.started,
                "finished": self.finished, "trajectories": self.trajectories,
                "outputs": self.outputs}

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def output_digests(self):
        return {o["path"]: o["sha256"] for o in self.outputs}


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_scenario(cfg, out_dir, workers=None):
    """Run every trajectory, write outputs and ``manifest.json`` under ``out_dir``.

    Returns
    -------
    RunManifest
        Output paths are relative to ``out_dir``; the manifest itself is not listed.
    """
    from .outputs import emit_outputs, write_table
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.digest, cfg.seed, __version__, _now())
    (out_dir / "config.json").write_text(
        json.dumps(_jsonable(cfg.to_dict()), indent=2, sort_keys=True) + "\n")
    files = []
    if cfg.n_trajectories > 0:
        if cfg.kind == "toyfock_oracle":
            table, summary = _run_toyfock(cfg)
            manifest.trajectories = [{"index": j, "master_seed": cfg.seed, "stream_id": j}
                                     for j in range(cfg.n_trajectories)]
            if "errors" in cfg.selectors:
                files.append(write_table(out_dir / "oracle_errors.csv", table))
            files += emit_outputs([], (), out_dir, summary=summary)
        else:
            trajs = run_trajectories(cfg, workers)
            times = cfg.dt * np.arange(int(round(cfg.T / cfg.dt)) + 1)
            manifest.trajectories = [{"index": j, "master_seed": cfg.seed, "stream_id": j}
                                     for j in range(len(trajs))]
            summarize = {"qubit_homodyne": _summary_qubit, "custom": _summary_qubit,
                         "free_particle": _summary_free_particle,
                         "classical_ou": _summary_classical}[cfg.kind]
            summary = summarize(cfg, trajs)
            files += emit_outputs([dict(t, time=times) for t in trajs], cfg.selectors, out_dir,
                                  summary=summary, svg=cfg.svg)
    manifest.outputs = [{"path": Path(f).relative_to(out_dir).as_posix(), "sha256": sha256_file(f)}
                        for f in files]
    manifest.finished = _now()
    manifest.write(out_dir / "manifest.json")
    return manifest


# convergence and sweeps --------------------------------------------------------------

def _aggregate(increments, factor):
    return increments.reshape(increments.shape[:-1] + (-1, factor)).sum(axis=-1)


def run_convergence(cfg, dt_list, n_paths=None):
    """Strong error of the final filter state against the finest step on shared noise.

    The finest entry of ``dt_list`` is the reference; coarser records sum its
    increments. Returns a dict with errors per coarse step and the fitted order.
    """
    from .stochastic import TimeGrid, sample_wiener_ensemble
    if cfg.kind == "toyfock_oracle":
        _, summary = _run_toyfock(replace(cfg, params=dict(cfg.params, dt_list=list(dt_list))))
        return summary
    dts = sorted((float(d) for d in dt_list), reverse=True)
    if len(dts) < 3:
        raise ConfigError("convergence needs at least three step sizes")
    fine = dts[-1]
    factors = [d / fine for d in dts]
    if any(abs(f - round(f)) > 1e-9 for f in factors):
        raise ConfigError("every step size must be an integer multiple of the finest one")
    for d in dts:
        if abs(round(cfg.T / d) * d - cfg.T) > 1e-9 * cfg.T:
            raise ConfigError(f"step size {d} does not divide the horizon {cfg.T}")
    grid = TimeGrid.from_horizon(cfg.T, fine)
    n_paths = max(cfg.n_trajectories, 1) if n_paths is None else n_paths
    noise = sample_wiener_ensemble(grid, cfg.seed, n_paths).increments
    finals = [_final_state(cfg, _aggregate(noise, int(round(f))), d)
              for f, d in zip(factors, dts)]
    ref = finals[-1]
    errs = np.array([np.mean(_state_distance(cfg, f, ref)) for f in finals[:-1]])
    coarse = np.array(dts[:-1])
    order = float(np.polyfit(np.log(coarse), np.log(errs), 1)[0]) if np.all(errs > 0) and \
        coarse.size >= 2 else float("nan")
    return {"dt_list": coarse.tolist(), "errors": errs.tolist(), "reference_dt": fine,
            "observed_order": order, "n_paths": n_paths}


def _final_state(cfg, record, dt):
    """Final filter state driven by ``record`` (rows are paths)."""
    p = cfg.params
    if cfg.kind in ("qubit_homodyne", "custom"):
        from .belavkin import MarkovModel, run_filter
        if cfg.kind == "qubit_homodyne":
            model, rho0 = _qubit_model(p["omega"], p["kappa"]), _qubit_state(p["theta"], p["phi"])
        else:
            psi = p["psi0"] / np.linalg.norm(p["psi0"])
            model, rho0 = MarkovModel(p["H"], p["L"]), np.outer(psi, psi.conj())
        return run_filter(model, rho0, record, dt, store=False, scheme=p["scheme"]).final.rho
    if cfg.kind == "free_particle":
        from .gaussian import free_particle_model, initial_belief, run_gaussian_filter
        model = free_particle_model(p["m"], p["lam"])
        b0 = initial_belief((p["p0"], p["q0"]))
        return np.array([run_gaussian_filter(model, b0, r, dt).theta[-1] for r in record])
    from .classical import cell_grid, gaussian_density, ornstein_uhlenbeck, run_zakai_pde
    model = ornstein_uhlenbeck(p["a_lin"], p["sigma"], p["g_lin"])
    d0 = gaussian_density(cell_grid(p["z_min"], p["z_max"], p["n_cells"]), p["m0"], p["P0"])
    # the record is read as observation increments of the signal model
    return np.array([run_zakai_pde(d0, model, r, dt)[0][-1] for r in record])


def _state_distance(cfg, a, b):
    if cfg.kind in ("qubit_homodyne", "custom"):
        from .hilbert import trace_distance
        return trace_distance(a, b)
    return np.abs(a - b).reshape(a.shape[0], -1).max(axis=-1)


def run_sweep(cfg, param, values, out_dir, workers=None):
    """One :func:`run_scenario` per value under ``out_dir/<param>=<value>``."""
    out_dir = Path(out_dir)
    results = []
    for v in values:
        sub = cfg.with_param(param, v)
        m = run_scenario(sub, out_dir / f"{param}={v}", workers)
        results.append({"value": v, "config_digest": m.config_digest, "outputs": m.outputs})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(json.dumps({"param": param, "runs": results},
                                                   indent=2, sort_keys=True) + "\n")
    return results
