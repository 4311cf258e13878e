"""YAML model files.

Schema::

    name: my-model            # optional
    n: 2                      # number of age components
    states:
      - id: 0
        label: idle           # optional
        drift: [1, 1]
    transitions:
      - source: 0
        target: 1
        label: capture        # optional
        rate:
          - {exponents: [1, 0], coefficient: 2.5}
        reset:
          matrix: [[1, 0], [0, 1]]     # or  constant: [0.0, 0.0]
    tracked: [0]              # optional; components whose average age is reported
    support:                  # optional
      zero: {0: [1]}          # state -> components identically zero
      less_than: [[1, 1, 0]]  # (state, i, j): x_i < x_j in that state

Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from .model import (
    ConstantReset,
    LinearBinaryReset,
    PolynomialRate,
    ShsModel,
    SupportHints,
    Transition,
)


class ConfigError(ValueError):
    pass


def _check_keys(obj: Any, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def parse_model(data: dict) -> ShsModel:
    _check_keys(data, {"name", "n", "states", "transitions", "support", "tracked"}, {"n", "states", "transitions"}, "model")
    n = int(data["n"])
    states, drift, labels = [], {}, {}
    for k, st in enumerate(data["states"]):
        _check_keys(st, {"id", "label", "drift"}, {"id", "drift"}, f"states[{k}]")
        q = int(st["id"])
        states.append(q)
        drift[q] = tuple(int(v) for v in st["drift"])
        if "label" in st:
            labels[q] = str(st["label"])

    transitions = []
    for k, tr in enumerate(data["transitions"]):
        where = f"transitions[{k}]"
        _check_keys(tr, {"source", "target", "label", "rate", "reset"}, {"source", "target", "rate", "reset"}, where)
        terms = {}
        for j, term in enumerate(tr["rate"]):
            _check_keys(term, {"exponents", "coefficient"}, {"exponents", "coefficient"}, f"{where}.rate[{j}]")
            exps = tuple(int(e) for e in term["exponents"])
            terms[exps] = terms.get(exps, 0.0) + float(term["coefficient"])
        reset_spec = tr["reset"]
        _check_keys(reset_spec, {"matrix", "constant"}, set(), f"{where}.reset")
        if len(reset_spec) != 1:
            raise ConfigError(f"{where}.reset: give exactly one of 'matrix' or 'constant'")
        if "matrix" in reset_spec:
            reset = LinearBinaryReset(tuple(tuple(row) for row in reset_spec["matrix"]))
        else:
            reset = ConstantReset(tuple(reset_spec["constant"]))
        transitions.append(
            Transition(
                int(tr["source"]),
                int(tr["target"]),
                PolynomialRate(n, terms),
                reset,
                str(tr.get("label", "")),
            )
        )

    support = SupportHints()
    if "support" in data:
        sup = data["support"]
        _check_keys(sup, {"zero", "less_than"}, set(), "support")
        support = SupportHints(
            zero={int(q): tuple(int(i) for i in comps) for q, comps in sup.get("zero", {}).items()},
            less_than=tuple(tuple(int(v) for v in t) for t in sup.get("less_than", [])),
        )
    return ShsModel(
        n=n,
        states=tuple(states),
        drift=drift,
        transitions=tuple(transitions),
        support=support,
        labels=labels,
        name=str(data.get("name", "")),
        tracked=tuple(int(i) for i in data["tracked"]) if "tracked" in data else None,
    )


def render_model(model: ShsModel) -> dict:
    states = []
    for q in model.states:
        st = {"id": q, "drift": list(model.drift[q])}
        if q in model.labels:
            st["label"] = model.labels[q]
        states.append(st)
    transitions = []
    for tr in model.transitions:
        item = {"source": tr.source, "target": tr.target}
        if tr.label:
            item["label"] = tr.label
        item["rate"] = [
            {"exponents": list(e), "coefficient": c} for e, c in sorted(tr.rate.terms.items())
        ]
        if isinstance(tr.reset, LinearBinaryReset):
            item["reset"] = {"matrix": [list(row) for row in tr.reset.matrix]}
        else:
            item["reset"] = {"constant": list(tr.reset.value)}
        transitions.append(item)
    out = {"n": model.n, "states": states, "transitions": transitions}
    if model.name:
        out = {"name": model.name, **out}
    if model.tracked is not None:
        out["tracked"] = list(model.tracked)
    if model.support.zero or model.support.less_than:
        out["support"] = {
            "zero": {q: list(c) for q, c in model.support.zero.items()},
            "less_than": [list(t) for t in model.support.less_than],
        }
    return out


def load_model(path: str | Path) -> ShsModel:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return parse_model(data)


def dump_model(model: ShsModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(render_model(model), fh, sort_keys=False)
