"""JSON instance files.

An instance file is a JSON object with the keys

``keywords``, ``clients``, ``slots``
    names (lists of strings) fixing the dimensions;
``ctr``
    nested list ``[keyword][client][slot]`` of click-through rates;
``bid``
    ``[keyword][client]`` payment per click (defaults to all ones);
``budget`` / ``requirement``
    per-client budget or impression requirement per cycle (either or both);
``arrival_prob`` and ``keyword_prob``
    per-slot arrival probability and the keyword distribution given an
    arrival; alternatively ``keyword_rates`` lists the joint per-slot rates
    of each keyword, whose sum becomes ``arrival_prob``;
``cycle_slots``
    slots per cycle;
``eligibility``
    optional ``[keyword][client][slot]`` booleans, or the string
    ``"positive_ctr"`` to allow exactly the pairs with positive rate.

Optional blocks: ``hourly_rates`` (``[hour][keyword]`` joint rates),
``short_term`` (``clients``, ``term_requirement``, ``x_values``,
``x_probs``, ``weight``, optional ``power``) and ``defaults`` (free-form
run parameters such as ``epsilon``). Keys starting with ``_`` are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import ProblemInstance

FIXTURES = ("ctr_benchmark", "small_revenue", "short_term_demo")


@dataclass
class InstanceBundle:
    instance: ProblemInstance
    hourly_rates: Optional[np.ndarray] = None
    short_term: Optional[dict] = None
    defaults: dict = field(default_factory=dict)
    source: str = ""


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return Path(str(resources.files("adqueue") / "data" / f"{name}.json"))


def resolve(ref: Union[str, Path]) -> Path:
    """A bundled fixture name or a filesystem path."""
    if isinstance(ref, str) and ref in FIXTURES:
        return fixture_path(ref)
    p = Path(ref)
    if not p.exists():
        raise FileNotFoundError(f"instance file not found: {p}")
    return p


def instance_from_dict(doc: dict, source: str = "") -> InstanceBundle:
    for key in ("ctr", "cycle_slots"):
        if key not in doc:
            raise ValueError(f"instance is missing required key {key!r}")
    ctr = np.asarray(doc["ctr"], dtype=float)
    if ctr.ndim != 3:
        raise ValueError("ctr must be a [keyword][client][slot] nested list")
    nq, n, _ = ctr.shape
    for key, size in (("keywords", nq), ("clients", n), ("slots", ctr.shape[2])):
        if key in doc and len(doc[key]) != size:
            raise ValueError(f"{key} lists {len(doc[key])} names but ctr implies {size}")
    if "keyword_rates" in doc:
        rates = np.asarray(doc["keyword_rates"], dtype=float)
        nu = float(rates.sum())
        arrival, kp = nu, rates / nu
    else:
        arrival = doc["arrival_prob"]
        kp = doc["keyword_prob"]
    elig = doc.get("eligibility")
    if isinstance(elig, str):
        if elig != "positive_ctr":
            raise ValueError(f"unknown eligibility rule {elig!r}")
        elig = ctr > 0
    bid = doc.get("bid")
    inst = ProblemInstance(
        ctr=ctr,
        bid=np.ones((nq, n)) if bid is None else bid,
        arrival_prob=arrival,
        keyword_prob=kp,
        cycle_slots=doc["cycle_slots"],
        budget=doc.get("budget"),
        requirement=doc.get("requirement"),
        eligibility=elig,
        keyword_names=doc.get("keywords"),
        client_names=doc.get("clients"),
        slot_names=doc.get("slots"),
        name=doc.get("name", source),
    )
    hourly = doc.get("hourly_rates")
    return InstanceBundle(
        instance=inst,
        hourly_rates=None if hourly is None else np.asarray(hourly, dtype=float),
        short_term=doc.get("short_term"),
        defaults=dict(doc.get("defaults", {})),
        source=source,
    )


def load_bundle(ref: Union[str, Path]) -> InstanceBundle:
    path = resolve(ref)
    with open(path) as fh:
        doc = json.load(fh)
    return instance_from_dict(doc, source=str(ref))


def load_instance(ref: Union[str, Path]) -> ProblemInstance:
    return load_bundle(ref).instance


def instance_to_dict(inst: ProblemInstance) -> dict:
    doc = {
        "keywords": list(inst.keyword_names or [f"q{q}" for q in range(inst.num_keywords)]),
        "clients": list(inst.client_names or [f"c{i}" for i in range(inst.num_clients)]),
        "slots": list(inst.slot_names or [f"s{s}" for s in range(inst.num_slots)]),
        "ctr": inst.ctr.tolist(),
        "bid": inst.bid.tolist(),
        "arrival_prob": inst.arrival_prob,
        "keyword_prob": inst.keyword_prob.tolist(),
        "cycle_slots": inst.cycle_slots,
        "eligibility": inst.eligibility.tolist(),
    }
    if inst.budget is not None:
        doc["budget"] = inst.budget.tolist()
    if inst.requirement is not None:
        doc["requirement"] = inst.requirement.tolist()
    return doc


def save_instance(inst: ProblemInstance, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)
