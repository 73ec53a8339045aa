"""JSON config parsing for the CLI, with exhaustive schema validation.

Unknown keys are errors, not warnings: a typo that silently fell back to
a default could corrupt a whole study.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .dgp import (
    CensoringMechanism,
    ConfounderDynamics,
    CostDynamics,
    DeathRisk,
    DgpConfig,
    TreatmentAssignment,
    no_censoring,
    nonrandom_dropout_censoring,
    random_censoring,
    staggered_entry_censoring,
)
from .errors import InputError
from .gformula import TreatmentRegime
from .study import ESTIMATORS, StudyConfig

__all__ = [
    "load_json",
    "parse_dgp_config",
    "parse_simulate_config",
    "parse_estimate_config",
    "parse_trajectories_config",
    "EstimateSettings",
    "SimulateSettings",
]

_CENSORING_FACTORIES = {
    "none": no_censoring,
    "random_p": random_censoring,
    "staggered_entry": staggered_entry_censoring,
    "nonrandom_dropout": nonrandom_dropout_censoring,
}


def load_json(path) -> dict:
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError("config root must be a JSON object")
    return raw


def _mapping(raw, where) -> dict:
    if not isinstance(raw, dict):
        raise InputError(f"{where} must be a JSON object")
    return dict(raw)


def _reject_unknown(raw: dict, where: str) -> None:
    if raw:
        names = ", ".join(sorted(repr(k) for k in raw))
        raise InputError(f"unknown key(s) in {where}: {names}")


def _coerce(value, kind, where):
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        pass
    raise InputError(f"{where}: expected {kind.__name__}, got {value!r}")


def _fill_dataclass(cls, raw: dict, where: str):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in raw:
            value = raw.pop(f.name)
            type_name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
            kind = {"float": float, "int": int, "str": str, "bool": bool}.get(
                type_name.replace(" ", "").split("|")[0], None
            )
            if kind is None:
                kwargs[f.name] = value
            else:
                kwargs[f.name] = _coerce(value, kind, f"{where}.{f.name}")
    _reject_unknown(raw, where)
    try:
        return cls(**kwargs)
    except (ValueError, NotImplementedError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def _parse_censoring(raw, where) -> CensoringMechanism:
    raw = _mapping(raw, where)
    mechanism = raw.pop("mechanism", "none")
    if mechanism not in _CENSORING_FACTORIES:
        raise InputError(
            f"{where}.mechanism: unknown censoring mechanism {mechanism!r}; "
            f"expected one of {sorted(_CENSORING_FACTORIES)}"
        )
    base = _CENSORING_FACTORIES[mechanism]()
    overrides = {}
    for name in ("rate", "intercept", "on_confounder", "on_treatment", "on_cost"):
        if name in raw:
            overrides[name] = _coerce(raw.pop(name), float, f"{where}.{name}")
    _reject_unknown(raw, where)
    try:
        return dataclasses.replace(base, **overrides)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from exc


def parse_dgp_config(raw, where: str = "dgp") -> DgpConfig:
    raw = _mapping(raw, where)
    kwargs = {}
    for name, kind in (
        ("n_subjects", int),
        ("n_intervals", int),
        ("seed", int),
        ("horizon", float),
        ("confounder_dim", int),
    ):
        if name in raw:
            kwargs[name] = _coerce(raw.pop(name), kind, f"{where}.{name}")
    for name, cls in (
        ("confounder", ConfounderDynamics),
        ("treatment", TreatmentAssignment),
        ("cost", CostDynamics),
        ("death", DeathRisk),
    ):
        if name in raw:
            section = _mapping(raw.pop(name), f"{where}.{name}")
            try:
                kwargs[name] = _fill_dataclass(cls, section, f"{where}.{name}")
            except InputError:
                raise
    if "censoring" in raw:
        kwargs["censoring"] = _parse_censoring(raw.pop("censoring"), f"{where}.censoring")
    _reject_unknown(raw, where)
    try:
        return DgpConfig(**kwargs)
    except (ValueError, NotImplementedError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def _parse_regime(raw, n_intervals: int, where: str) -> TreatmentRegime:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool) and raw in (0, 1):
        return TreatmentRegime.constant(n_intervals, int(raw))
    if isinstance(raw, list):
        if len(raw) != n_intervals:
            raise InputError(
                f"{where}: regime length {len(raw)} != {n_intervals} intervals"
            )
        try:
            return TreatmentRegime(tuple(int(a) for a in raw))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{where}: {exc}") from exc
    raise InputError(f"{where}: expected 0, 1, or a 0/1 list")


def _parse_estimators(raw, where) -> tuple[str, ...]:
    if not isinstance(raw, list) or not raw:
        raise InputError(f"{where}: expected a non-empty list")
    for name in raw:
        if name not in ESTIMATORS:
            raise InputError(
                f"{where}: unknown estimator {name!r}; expected subset of {ESTIMATORS}"
            )
    return tuple(raw)


@dataclass(frozen=True)
class SimulateSettings:
    study: StudyConfig
    mode: str  # "study" or "level"
    alpha: float


def parse_simulate_config(raw: dict) -> SimulateSettings:
    raw = _mapping(raw, "config")
    dgp = parse_dgp_config(raw.pop("dgp", {}), "dgp")
    mode = raw.pop("mode", "study")
    if mode not in ("study", "level"):
        raise InputError(f"mode: expected 'study' or 'level', got {mode!r}")
    alpha = _coerce(raw.pop("alpha", 0.05), float, "alpha")
    kwargs = {"dgp": dgp}
    for name, kind in (
        ("n_reps", int),
        ("n_paths", int),
        ("n_replicates", int),
        ("oracle_paths", int),
        ("level", float),
        ("seed", int),
        ("fit_cost_family", str),
    ):
        if name in raw:
            kwargs[name] = _coerce(raw.pop(name), kind, name)
    if "estimators" in raw:
        kwargs["estimators"] = _parse_estimators(raw.pop("estimators"), "estimators")
    if "true_delta" in raw:
        value = raw.pop("true_delta")
        kwargs["true_delta"] = None if value is None else _coerce(value, float, "true_delta")
    for key in ("regime_a", "regime_b"):
        if key in raw:
            kwargs[key] = _parse_regime(raw.pop(key), dgp.n_intervals, key)
    _reject_unknown(raw, "config")
    try:
        return SimulateSettings(study=StudyConfig(**kwargs), mode=mode, alpha=alpha)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


@dataclass(frozen=True)
class EstimateSettings:
    cost_family: str
    estimators: tuple[str, ...]
    regime_a: TreatmentRegime | None
    regime_b: TreatmentRegime | None
    n_paths: int
    n_replicates: int
    seed: int
    level: float
    delta0: float
    n_intervals: int | None
    horizon: float | None


def parse_estimate_config(raw: dict) -> EstimateSettings:
    raw = _mapping(raw, "config")
    cost_family = _coerce(raw.pop("cost_family", "normal"), str, "cost_family")
    if cost_family not in ("normal", "gamma", "inverse_gaussian"):
        raise InputError(f"cost_family: unknown family {cost_family!r}")
    estimators = (
        _parse_estimators(raw.pop("estimators"), "estimators")
        if "estimators" in raw
        else ("nested_g",)
    )
    n_intervals = (
        _coerce(raw.pop("n_intervals"), int, "n_intervals")
        if "n_intervals" in raw
        else None
    )
    horizon = _coerce(raw.pop("horizon"), float, "horizon") if "horizon" in raw else None
    regime_a = regime_b = None
    if n_intervals is not None:
        if "regime_a" in raw:
            regime_a = _parse_regime(raw.pop("regime_a"), n_intervals, "regime_a")
        if "regime_b" in raw:
            regime_b = _parse_regime(raw.pop("regime_b"), n_intervals, "regime_b")
    else:
        # Without an explicit interval count, regimes resolve against the
        # panel after it is read; store raw constants only.
        for key in ("regime_a", "regime_b"):
            if key in raw:
                value = raw.pop(key)
                if value not in (0, 1):
                    raise InputError(
                        f"{key}: list regimes require n_intervals in the config"
                    )
                if key == "regime_a":
                    regime_a = TreatmentRegime((int(value),))
                else:
                    regime_b = TreatmentRegime((int(value),))
    settings = EstimateSettings(
        cost_family=cost_family,
        estimators=estimators,
        regime_a=regime_a,
        regime_b=regime_b,
        n_paths=_coerce(raw.pop("n_paths", 100_000), int, "n_paths"),
        n_replicates=_coerce(raw.pop("n_replicates", 100), int, "n_replicates"),
        seed=_coerce(raw.pop("seed", 0), int, "seed"),
        level=_coerce(raw.pop("level", 0.95), float, "level"),
        delta0=_coerce(raw.pop("delta0", 0.0), float, "delta0"),
        n_intervals=n_intervals,
        horizon=horizon,
    )
    _reject_unknown(raw, "config")
    return settings


def parse_trajectories_config(raw: dict) -> DgpConfig:
    raw = _mapping(raw, "config")
    dgp = parse_dgp_config(raw.pop("dgp", {}), "dgp")
    _reject_unknown(raw, "config")
    return dgp
