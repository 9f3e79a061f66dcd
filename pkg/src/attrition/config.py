"""Model documents: declarative JSON in, game models out.

A document carries the diffusion (kind plus numeric coefficients, with
custom drift/volatility given as named functional forms -- never code),
the payoff primitives as named forms, and the exit payoffs.  Firms may
be given per-firm blocks for the heterogeneous mode.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

from .diffusion import DEFAULT_TRUNCATION_WEIGHT, DiffusionSpec
from .forms import Form, FormError
from .payoffs import FirmSpec, GameModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def load_document(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model document not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc


def _need(doc: dict, key: str, where: str = "document"):
    if key not in doc:
        raise ConfigError(f"missing key {key!r} in {where}")
    return doc[key]


def _form(doc, key, where) -> Form:
    try:
        return Form.from_dict(_need(doc, key, where))
    except FormError as exc:
        raise ConfigError(f"bad functional form at {where}.{key}: {exc}") from exc


def build_diffusion(doc: dict, deterministic: bool = False) -> DiffusionSpec:
    d = _need(doc, "diffusion")
    kind = _need(d, "kind", "diffusion")
    if kind == "abm":
        spec = DiffusionSpec.abm(float(_need(d, "mu", "diffusion")), float(_need(d, "sigma", "diffusion")))
    elif kind == "gbm":
        spec = DiffusionSpec.gbm(float(_need(d, "mu", "diffusion")), float(_need(d, "sigma", "diffusion")))
    elif kind == "ou":
        spec = DiffusionSpec.ou(float(_need(d, "rate", "diffusion")), float(_need(d, "mean", "diffusion")),
                                float(_need(d, "sigma", "diffusion")))
    elif kind == "custom":
        state = d.get("state", [-math.inf, math.inf])
        spec = DiffusionSpec.custom(_form(d, "mu", "diffusion"), _form(d, "sigma", "diffusion"),
                                    state_lo=float(state[0]), state_hi=float(state[1]))
    else:
        raise ConfigError(f"unknown diffusion kind {kind!r}")
    if deterministic or d.get("deterministic", False):
        spec = dataclasses.replace(spec, deterministic=True)
    trunc = d.get("truncation")
    if trunc is not None:
        if not (isinstance(trunc, (list, tuple)) and len(trunc) == 2):
            raise ConfigError("diffusion.truncation must be [lo, hi]")
        spec = spec.with_truncation(float(trunc[0]), float(trunc[1]))
    return spec


def build_model(doc: dict, hetero: bool = False, deterministic: bool = False) -> tuple:
    """Returns (model, meta) where meta holds x0 and echo data."""
    if doc.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {doc.get('schema')}")
    spec = build_diffusion(doc, deterministic)
    weight = float(doc.get("truncation_weight", DEFAULT_TRUNCATION_WEIGHT))
    center = doc.get("center")
    center = float(center) if center is not None else None

    if hetero or "firms" in doc:
        firms_doc = _need(doc, "firms")
        if not (isinstance(firms_doc, list) and len(firms_doc) == 2):
            raise ConfigError("firms must be a list of exactly two blocks")
        firms = []
        for j, fd in enumerate(firms_doc, start=1):
            where = f"firms[{j}]"
            firms.append(FirmSpec(
                discount=float(_need(fd, "discount", where)),
                profit=_form(fd, "profit", where),
                winner=_form(fd, "winner", where),
                exit_payoff=_form(fd, "exit", where),
            ))
        model = GameModel.heterogeneous(spec, firms[0], firms[1], center=center, truncation_weight=weight)
    else:
        r = float(_need(doc, "discount"))
        profit = _form(doc, "profit", "document")
        winner = _form(doc, "winner", "document")
        l_pair = _need(doc, "exit_payoffs")
        if not (isinstance(l_pair, (list, tuple)) and len(l_pair) == 2):
            raise ConfigError("exit_payoffs must be [l1, l2]")
        model = GameModel.basic(spec, r, profit, winner, float(l_pair[0]), float(l_pair[1]),
                                center=center, truncation_weight=weight)

    meta = {"x0": float(doc["x0"]) if "x0" in doc else None,
            "resolved_truncation": list(model.window),
            "schema": SCHEMA_VERSION}
    return model, meta


def model_echo(doc: dict, meta: dict, overrides: dict) -> dict:
    """Full resolved configuration embedded in every report for reproducibility."""
    return {"document": doc, "meta": meta, "overrides": overrides}
