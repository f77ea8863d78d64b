"""Artifact persistence: manifests, per-step surrogate documents, reload.

A solve writes a directory with a manifest (version, seed, resolved config,
wall-clock timings), a bundle index, and one JSON document per backward step
holding the design, both surrogates, and the per-site optimization record.
Floats are serialized with their shortest round-trip representation, so a
reloaded surrogate predicts bit-identically.
"""

from __future__ import annotations

import json
import math
import os
from typing import Optional, Tuple

import numpy as np

from . import __version__, gp
from .dynamics import AugmentedState, Beliefs, LossFunction, ProblemSpec
from .numerics import QuadratureRule
from .solver import Design, PolicyBundle, StepSolution

MANIFEST_NAME = "manifest.json"
BUNDLE_NAME = "bundle.json"
STEP_DIR = "steps"


def _spec_doc(spec: ProblemSpec) -> dict:
    doc = {
        "kind": spec.kind, "r": spec.r, "dt": spec.dt,
        "n_steps": spec.n_steps, "alpha": spec.alpha,
    }
    if spec.kind == "portfolio":
        doc["gamma"] = spec.gamma
    else:
        doc["strike"] = spec.strike
        doc["lambda"] = spec.loss.lam
        doc["k0"] = spec.k0
    return doc


def _spec_from_doc(doc: dict) -> ProblemSpec:
    if doc["kind"] == "portfolio":
        return ProblemSpec(kind="portfolio", r=doc["r"], dt=doc["dt"], n_steps=doc["n_steps"],
                           alpha=doc["alpha"], gamma=doc["gamma"])
    return ProblemSpec(kind="hedging", r=doc["r"], dt=doc["dt"], n_steps=doc["n_steps"],
                       alpha=doc["alpha"], strike=doc["strike"],
                       loss=LossFunction(doc["lambda"]), k0=doc["k0"])


def _surrogate_doc(s: gp.GpSurrogate) -> dict:
    return {
        "family": s.kernel.family,
        "tau2": s.kernel.tau2,
        "lengthscales": np.asarray(s.kernel.lengthscales, dtype=float).tolist(),
        "nugget": s.kernel.nugget,
        "prior_mean": s.prior_mean,
        "inputs": s.inputs.tolist(),
        "outputs": s.outputs.tolist(),
        "lo": s.lo.tolist(),
        "span": s.span.tolist(),
    }


def _surrogate_from_doc(doc: dict) -> gp.GpSurrogate:
    kernel = gp.KernelSpec(
        family=doc["family"], tau2=doc["tau2"],
        lengthscales=np.asarray(doc["lengthscales"], dtype=float), nugget=doc["nugget"],
    )
    return gp.rehydrate(kernel, doc["inputs"], doc["outputs"], doc["prior_mean"], doc["lo"], doc["span"])


def _design_doc(d: Design) -> dict:
    return {
        "k": d.k,
        "sites": [
            {"market": list(s.market), "mu_bar": s.beliefs.mu_bar,
             "sigma_bar": s.beliefs.sigma_bar, "n_eff": s.beliefs.n_eff}
            for s in d.sites
        ],
        "provenance": list(d.provenance),
        "edge_parents": [
            {"site": i, "mu_bar": b.mu_bar, "sigma_bar": b.sigma_bar, "n_eff": b.n_eff}
            for i, b in d.edge_parents
        ],
    }


def _design_from_doc(doc: dict) -> Design:
    sites = tuple(
        AugmentedState(
            market=tuple(s["market"]),
            beliefs=Beliefs(s["mu_bar"], s["sigma_bar"], s["n_eff"]),
            k=doc["k"],
        )
        for s in doc["sites"]
    )
    parents = tuple(
        (p["site"], Beliefs(p["mu_bar"], p["sigma_bar"], p["n_eff"])) for p in doc["edge_parents"]
    )
    return Design(sites=sites, provenance=tuple(doc["provenance"]), edge_parents=parents)


def _nan_to_none(rows: np.ndarray) -> list:
    out = []
    for row in np.asarray(rows, dtype=float):
        out.append([None if math.isnan(v) else float(v) for v in row])
    return out


def _none_to_nan(rows: list) -> np.ndarray:
    return np.array([[math.nan if v is None else float(v) for v in row] for row in rows], dtype=float)


def _step_doc(step: StepSolution) -> dict:
    return {
        "k": step.k,
        "design": _design_doc(step.design),
        "value_surrogate": _surrogate_doc(step.value_surrogate),
        "control_surrogate": _surrogate_doc(step.control_surrogate),
        "worst_case": _nan_to_none(step.worst_case_records),
        "raw_values": np.asarray(step.raw_values, dtype=float).tolist(),
        "raw_controls": np.asarray(step.raw_controls, dtype=float).tolist(),
    }


def _step_from_doc(doc: dict) -> StepSolution:
    return StepSolution(
        k=doc["k"],
        design=_design_from_doc(doc["design"]),
        value_surrogate=_surrogate_from_doc(doc["value_surrogate"]),
        control_surrogate=_surrogate_from_doc(doc["control_surrogate"]),
        worst_case_records=_none_to_nan(doc["worst_case"]),
        raw_values=np.asarray(doc["raw_values"], dtype=float),
        raw_controls=np.asarray(doc["raw_controls"], dtype=float),
    )


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_artifact(bundle: PolicyBundle, config_sections: dict, out_dir: str, timings: Optional[dict] = None) -> None:
    """Write manifest + bundle index + one document per backward step."""
    os.makedirs(os.path.join(out_dir, STEP_DIR), exist_ok=True)
    step_files = []
    for step in bundle.steps:
        name = os.path.join(STEP_DIR, f"step_{step.k:04d}.json")
        _write_json(os.path.join(out_dir, name), _step_doc(step))
        step_files.append(name)
    _write_json(
        os.path.join(out_dir, BUNDLE_NAME),
        {
            "problem": _spec_doc(bundle.spec),
            "mode": bundle.mode,
            "terminal": bundle.terminal,
            "quadrature": {
                "knots": np.asarray(bundle.quadrature.knots, dtype=float).tolist(),
                "weights": np.asarray(bundle.quadrature.weights, dtype=float).tolist(),
            },
            "steps": step_files,
        },
    )
    _write_json(
        os.path.join(out_dir, MANIFEST_NAME),
        {
            "version": __version__,
            "mode": bundle.mode,
            "seed": config_sections.get("solver", {}).get("seed"),
            "config": config_sections,
            "timings": timings or {},
        },
    )


def load_artifact(out_dir: str) -> Tuple[PolicyBundle, dict]:
    """Load a solve artifact; errors if written by a different package version."""
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    bundle_path = os.path.join(out_dir, BUNDLE_NAME)
    if not os.path.isfile(manifest_path) or not os.path.isfile(bundle_path):
        raise FileNotFoundError(f"{out_dir}: not an artifact directory (missing manifest or bundle)")
    manifest = _read_json(manifest_path)
    if manifest.get("version") != __version__:
        raise ValueError(
            f"{out_dir}: artifact version {manifest.get('version')!r} does not match package {__version__!r}"
        )
    doc = _read_json(bundle_path)
    spec = _spec_from_doc(doc["problem"])
    steps = tuple(_step_from_doc(_read_json(os.path.join(out_dir, name))) for name in doc["steps"])
    rule = QuadratureRule(
        knots=np.asarray(doc["quadrature"]["knots"], dtype=float),
        weights=np.asarray(doc["quadrature"]["weights"], dtype=float),
    )
    bundle = PolicyBundle(spec=spec, quadrature=rule, steps=steps, terminal=doc["terminal"], mode=doc["mode"])
    return bundle, manifest
