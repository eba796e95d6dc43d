"""Batch driver: load a JSON experiment config, run check suites, write reports.

Exit status: 0 when every selected suite passes, 1 when a suite fails,
2 when the config is malformed.  Reports are sorted, timing-free JSON so
identical (config, seed) pairs give byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from frechetkit import expr_dsl
from frechetkit.calculus import Ball, MCMap, differential, directional_derivative
from frechetkit.connections import (
    ChristoffelField,
    OdeSystem,
    christoffel_from_diagonal,
    compatibility_residual,
    connection_to_ode,
    merge_second_tangent,
    ode_to_connection,
    pushforward_christoffel,
    split_second_tangent,
)
from frechetkit.errors import ConfigError, FrechetKitError
from frechetkit.frechet_core import (
    AlphaSequence,
    FrechetSpace,
    GradedVector,
    SeminormFamily,
    WeightRule,
    check_absolutely_convex,
    check_metric_axioms,
    metric_distance,
    metric_terms,
    sample_dyadic,
    sample_vector,
)
from frechetkit.integrator import (
    PicardProblem,
    VectorFieldLocal,
    flow_with_certificate,
    horizon,
    picard_solve,
    transformation_probe,
    uniqueness_overlap_check,
)
from frechetkit.lipschitz_ops import (
    Composition,
    Diagonal,
    DiagonalRule,
    FiniteMatrix,
    Identity,
    Scalar,
    Shift,
    Sum,
    TensorMultilinear,
    Zero,
    compose,
    curried_ratio,
    curry,
    lip_norm_estimate,
    multilinear_norm_estimate,
    multilinear_ratio,
    random_structured_map,
    uncurry,
    witness_ratio,
)
from frechetkit.manifold_charts import (
    Atlas,
    Chart,
    Jet2,
    Jet1,
    Overlap,
    cocycle_check,
    jet2_additivity_residual,
    jet2_transition,
    tangent_map,
    transition,
)

SUITES = (
    "verify-metric",
    "verify-ops",
    "verify-atlas",
    "compat-check",
    "split-roundtrip",
    "ode-roundtrip",
    "integrate",
    "flow",
    "uniqueness",
)

# config section each suite reads
SECTION = {
    "verify-metric": "metric",
    "verify-ops": "operators",
    "verify-atlas": "atlas",
    "compat-check": "christoffel",
    "split-roundtrip": "christoffel",
    "ode-roundtrip": "ode",
    "integrate": "picard",
    "flow": "flow",
    "uniqueness": "uniqueness",
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM}
_EXPRS = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_BALL = {
    "type": "object",
    "required": ["center", "radius"],
    "properties": {"center": _VEC, "radius": _POS},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed", "spaces"],
    "properties": {
        "schema_version": {"const": 1},
        "seed": {"type": "integer", "minimum": 0},
        "suites": {"type": "array", "items": {"enum": list(SUITES)}},
        "spaces": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["seminorms", "alphas"],
                "properties": {
                    "seminorms": {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["prefix_sup", "weighted_prefix_sup"]},
                            "weights": {
                                "type": "object",
                                "required": ["rule"],
                                "properties": {"rule": {"enum": ["constant", "power", "geometric"]},
                                               "value": _NUM},
                            },
                        },
                    },
                    "alphas": {
                        "type": "object",
                        "required": ["rule"],
                        "properties": {"rule": {"enum": ["geometric", "power"]},
                                       "c": _POS, "q": _NUM, "p": _NUM},
                    },
                    "degree_cap": _COUNT,
                },
            },
        },
        "metric": {
            "type": "object",
            "required": ["space"],
            "properties": {"space": {"type": "string"}, "samples": _COUNT, "convexity_samples": _COUNT,
                           "radius": _POS, "oracle_samples": _COUNT, "tol": _NUM},
        },
        "operators": {
            "type": "object",
            "required": ["space"],
            "properties": {
                "space": {"type": "string"},
                "probe_budget": _COUNT,
                "pairs": {"type": "integer", "minimum": 0},
                "pair_budget": _COUNT,
                "curry_samples": {"type": "integer", "minimum": 0},
                "maps": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "required": ["op"],
                        "properties": {"op": {"$ref": "#/$defs/operator"}, "lower_bound_at_least": _NUM},
                    },
                },
            },
        },
        "atlas": {
            "type": "object",
            "required": ["space", "charts"],
            "properties": {
                "space": {"type": "string"},
                "charts": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["label", "forward"],
                        "properties": {"label": {"type": "string"}, "forward": _EXPRS, "inverse": _EXPRS,
                                       "domain": _BALL},
                    },
                },
                "overlaps": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["charts", "region"],
                        "properties": {
                            "charts": {"type": "array", "items": {"type": "string"}, "minItems": 2,
                                       "maxItems": 2},
                            "region": _BALL,
                        },
                    },
                },
                "cocycle_samples": _COUNT,
                "cocycle_tol": _NUM,
                "jets": {
                    "type": "object",
                    "required": ["transition", "x", "v", "w"],
                    "properties": {
                        "transition": {"type": "array", "items": {"type": "string"}, "minItems": 2,
                                       "maxItems": 2},
                        "x": _VEC, "v": _VEC, "w": _VEC,
                        "expected": {"type": "object", "required": ["x", "v", "w"],
                                     "properties": {"x": _VEC, "v": _VEC, "w": _VEC}},
                        "tol": _NUM,
                        "additivity_min": _NUM,
                        "linearity_samples": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "christoffel": {
            "type": "object",
            "required": ["chart", "dim", "coefficients"],
            "properties": {
                "chart": {"type": "string"},
                "dim": _COUNT,
                "coefficients": {"type": "object", "additionalProperties": {"type": "string"}},
                "transition": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                "samples": _COUNT,
                "tol": _NUM,
                "identity_tol": _NUM,
                "split_samples": _COUNT,
            },
        },
        "ode": {
            "type": "object",
            "required": ["A"],
            "properties": {
                "A": {"type": "array", "minItems": 1,
                      "items": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
                "interval": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "samples": _COUNT,
                "transfer_chart": {"type": "object", "required": ["forward", "inverse"],
                                   "properties": {"forward": _EXPRS, "inverse": _EXPRS}},
                "transfer_tol": _NUM,
            },
        },
        "fields": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["chart", "components", "L_sup", "R_lip"],
                "properties": {"chart": {"type": "string"}, "components": _EXPRS, "L_sup": _POS,
                               "R_lip": _POS, "space": {"type": "string"}, "heuristic": {"type": "boolean"}},
            },
        },
        "picard": {
            "type": "object",
            "required": ["field", "p0"],
            "properties": {
                "field": {"type": "string"}, "p0": _VEC, "t0": _NUM, "r": _POS, "grid_step": _POS,
                "tol": _NUM, "max_iters": _COUNT, "oracle": _EXPRS,
                "csv": {"type": "string"}, "certificate": {"type": "string"},
            },
        },
        "flow": {
            "type": "object",
            "required": ["field", "p0", "q", "t"],
            "properties": {
                "field": {"type": "string"}, "p0": _VEC, "q": _VEC, "t": _NUM, "r": _POS,
                "grid_step": _POS, "tol": _NUM, "oracle": _EXPRS,
                "semigroup": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            },
        },
        "uniqueness": {
            "type": "object",
            "required": ["fields", "charts", "point", "t_range"],
            "properties": {
                "fields": {"type": "object", "additionalProperties": {"type": "string"}},
                "charts": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                "point": _VEC, "t_range": _POS, "r": _POS, "grid_step": _POS, "tol": _NUM,
                "reject": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
    },
    "$defs": {
        "operator": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["zero", "identity", "scalar", "diagonal", "matrix", "shift", "sum",
                                  "compose"]},
                "c": _NUM,
                "rule": {"enum": ["index", "constant", "power", "geometric", "values"]},
                "params": _VEC,
                "entries": {"type": "array", "items": _VEC},
                "direction": {"enum": ["left", "right"]},
                "terms": {"type": "array", "items": {"$ref": "#/$defs/operator"}, "minItems": 1},
                "factors": {"type": "array", "items": {"$ref": "#/$defs/operator"}, "minItems": 1},
            },
        }
    },
}


# ------------------------------------------------------------------ config


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate_config(cfg: dict) -> None:
    """Schema check, then cross-reference resolution; raises :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.path)), e.message))
    if errors:
        err = errors[0]
        path = list(err.path)
        if err.validator == "required" and isinstance(err.instance, dict):
            missing = [k for k in err.validator_value if k not in err.instance]
            if missing:
                path.append(missing[0])
                raise ConfigError(f"missing required field {missing[0]!r}", _pointer(path))
        raise ConfigError(err.message, _pointer(path))

    spaces = cfg["spaces"]
    for sec in ("metric", "operators", "atlas"):
        if sec in cfg and cfg[sec]["space"] not in spaces:
            raise ConfigError(f"unknown space {cfg[sec]['space']!r}", f"/{sec}/space")
    fields = cfg.get("fields", {})
    for name, fld in fields.items():
        if "space" in fld and fld["space"] not in spaces:
            raise ConfigError(f"unknown space {fld['space']!r}", f"/fields/{name}/space")
    for sec in ("picard", "flow"):
        if sec in cfg and cfg[sec]["field"] not in fields:
            raise ConfigError(f"unknown field {cfg[sec]['field']!r}", f"/{sec}/field")
    labels = {c["label"] for c in cfg.get("atlas", {}).get("charts", [])}
    atlas = cfg.get("atlas", {})
    for i, ov in enumerate(atlas.get("overlaps", [])):
        for lab in ov["charts"]:
            if lab not in labels:
                raise ConfigError(f"unknown chart {lab!r}", f"/atlas/overlaps/{i}/charts")
    if "jets" in atlas:
        for lab in atlas["jets"]["transition"]:
            if lab not in labels:
                raise ConfigError(f"unknown chart {lab!r}", "/atlas/jets/transition")
    if "christoffel" in cfg:
        ch = cfg["christoffel"]
        for lab in [ch["chart"]] + ch.get("transition", []):
            if lab not in labels:
                raise ConfigError(f"unknown chart {lab!r}", "/christoffel")
    if "uniqueness" in cfg:
        un = cfg["uniqueness"]
        for key in ("fields", "reject"):
            for lab, fname in un.get(key, {}).items():
                if lab not in labels:
                    raise ConfigError(f"unknown chart {lab!r}", f"/uniqueness/{key}/{lab}")
                if fname not in fields:
                    raise ConfigError(f"unknown field {fname!r}", f"/uniqueness/{key}/{lab}")
        for lab in un["charts"]:
            if lab not in un["fields"]:
                raise ConfigError(f"no field given for chart {lab!r}", "/uniqueness/charts")
    for name, fld in fields.items():
        if labels and fld["chart"] not in labels and "uniqueness" in cfg:
            raise ConfigError(f"unknown chart {fld['chart']!r}", f"/fields/{name}/chart")


def load_config(path: str | None) -> dict:
    if path is None:
        text = resources.files("frechetkit").joinpath("data/default_config.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", "/") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", "/") from None
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------- builders


def build_space(sid: str, desc: dict) -> FrechetSpace:
    sn = desc["seminorms"]
    weights = WeightRule(**sn["weights"]) if "weights" in sn else WeightRule()
    return FrechetSpace(sid, SeminormFamily(sn["kind"], weights), AlphaSequence(**desc["alphas"]),
                        desc.get("degree_cap"))


def build_operator(desc: dict, space: str):
    kind = desc["kind"]
    if kind == "zero":
        return Zero(space, space)
    if kind == "identity":
        return Identity(space)
    if kind == "scalar":
        return Scalar(float(desc.get("c", 1.0)), space)
    if kind == "diagonal":
        return Diagonal(DiagonalRule(desc.get("rule", "index"), tuple(desc.get("params", ()))), space)
    if kind == "matrix":
        return FiniteMatrix.from_array(desc["entries"], space)
    if kind == "shift":
        return Shift(desc.get("direction", "left"), space)
    if kind == "sum":
        return Sum(tuple(build_operator(t, space) for t in desc["terms"]), space, space)
    return Composition(tuple(build_operator(f, space) for f in desc["factors"]))


def build_atlas(desc: dict) -> Atlas:
    sp = desc["space"]
    charts = []
    for c in desc["charts"]:
        dom = Ball(tuple(c["domain"]["center"]), c["domain"]["radius"]) if "domain" in c else None
        charts.append(Chart.from_expressions(c["label"], c["forward"], c.get("inverse"), dom, sp))
    overlaps = [Overlap(tuple(o["charts"]), Ball(tuple(o["region"]["center"]), o["region"]["radius"]))
                for o in desc.get("overlaps", [])]
    return Atlas(charts, overlaps)


def build_field(name: str, cfg: dict, spaces: dict) -> VectorFieldLocal:
    desc = cfg["fields"][name]
    sp = spaces[desc.get("space", next(iter(sorted(spaces))))]
    return VectorFieldLocal.from_expressions(desc["chart"], desc["components"], desc["L_sup"], desc["R_lip"],
                                             sp, desc.get("heuristic", False))


def _vec(coords, space_id) -> GradedVector:
    return GradedVector(tuple(float(c) for c in coords), space_id)


def _eval_texts(texts, t: float) -> list[float]:
    return [expr_dsl.evaluate(expr_dsl.parse(s), {"t": t}) for s in texts]


# ----------------------------------------------------------------- reports


def jsonable(obj):
    """Plain JSON data; non-finite floats become strings."""
    if isinstance(obj, GradedVector):
        return {"space": obj.space_id, "coords": [jsonable(c) for c in obj.coords]}
    if isinstance(obj, (Jet1, Jet2)):
        return {k: jsonable(v) for k, v in vars(obj).items()}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def _check(passed, value=None, threshold=None, witness=None, **extra) -> dict:
    out = {"passed": bool(passed)}
    if value is not None:
        out["value"] = value
    if threshold is not None:
        out["threshold"] = threshold
    if witness is not None:
        out["witness"] = witness
    out.update(extra)
    return out


class Context:
    def __init__(self, cfg: dict, seed: int, out: Path, grid_step=None, tol=None):
        self.cfg, self.seed, self.out = cfg, seed, out
        self.grid_step, self.tol = grid_step, tol
        self.spaces = {sid: build_space(sid, s) for sid, s in cfg["spaces"].items()}
        self._atlas = None

    @property
    def atlas(self) -> Atlas:
        if self._atlas is None:
            self._atlas = build_atlas(self.cfg["atlas"])
        return self._atlas

    def field(self, name: str) -> VectorFieldLocal:
        return build_field(name, self.cfg, self.spaces)

    def step(self, sec: dict) -> float:
        return self.grid_step if self.grid_step is not None else sec.get("grid_step", 1e-3)

    def tolerance(self, sec: dict) -> float:
        return self.tol if self.tol is not None else sec.get("tol", 1e-12)


# ------------------------------------------------------------------ suites


def suite_metric(ctx: Context) -> dict:
    sec = ctx.cfg["metric"]
    sp = ctx.spaces[sec["space"]]
    tol = sec.get("tol", 1e-12)
    axioms = check_metric_axioms(sp, sec.get("samples", 10000), ctx.seed, tol)
    checks = {}
    for name in sorted(axioms.violations):
        checks[f"axiom_{name}"] = _check(axioms.violations[name] == 0, axioms.worst[name], tol,
                                         axioms.witnesses.get(name), violations=axioms.violations[name])
    conv = check_absolutely_convex(sp, sec.get("radius", 0.25), sec.get("convexity_samples", 10000),
                                   ctx.seed + 1, tol)
    checks["absolute_convexity"] = _check(conv.passed, conv.worst_margin, tol, conv.witness,
                                          violations=conv.violations)
    rng = np.random.default_rng(ctx.seed + 2)
    mismatches, witness = 0, None
    for _ in range(sec.get("oracle_samples", 1000)):
        e, f = sample_vector(rng, sp.id), sample_vector(rng, sp.id)
        deg = max(e.deg, f.deg, 1)
        brute = max(metric_terms(sp, e - f, deg + 4))
        if brute != metric_distance(sp, e, f):
            mismatches += 1
            witness = witness or (e, f)
    checks["term_enumeration_oracle"] = _check(mismatches == 0, mismatches, 0, witness)
    return checks


def suite_ops(ctx: Context) -> dict:
    sec = ctx.cfg["operators"]
    sp = ctx.spaces[sec["space"]]
    budget = sec.get("probe_budget", 256)
    checks = {}
    for name in sorted(sec.get("maps", {})):
        desc = sec["maps"][name]
        L = build_operator(desc["op"], sp.id)
        est = lip_norm_estimate(L, sp, sp, budget, ctx.seed)
        need = desc.get("lower_bound_at_least")
        checks[f"norm_{name}"] = _check(need is None or est.lower_bound >= need, est.lower_bound, need,
                                        est.witness, estimate=est.estimate)
    rng = np.random.default_rng(ctx.seed + 3)
    pb = sec.get("pair_budget", 64)
    worst, witness, fails = 0.0, None, 0
    for i in range(sec.get("pairs", 200)):
        L, H = random_structured_map(rng, sp.id), random_structured_map(rng, sp.id)
        lh = lip_norm_estimate(compose(L, H), sp, sp, pb, ctx.seed + i)
        if lh.witness is None:
            continue
        x = lh.witness[0]
        eL = lip_norm_estimate(L, sp, sp, pb, ctx.seed + i, extra_probes=[H.apply(x)])
        eH = lip_norm_estimate(H, sp, sp, pb, ctx.seed + i, extra_probes=[x])
        prod = eL.lower_bound * eH.lower_bound
        excess = lh.lower_bound - prod * (1 + 1e-12)
        worst = max(worst, excess)
        if excess > 0:
            fails += 1
            witness = witness or {"pair": i, "x": x}
    checks["submultiplicativity"] = _check(fails == 0, worst, 0.0, witness, violations=fails)

    dims = (2, 2, 3)
    rt_fail, ratio_err = 0, 0.0
    for i in range(sec.get("curry_samples", 20)):
        B = TensorMultilinear(rng.integers(-3, 4, size=(3,) + dims).astype(float), (sp.id,) * 3, sp.id)
        xs = [_vec(rng.normal(size=d), sp.id) for d in dims]
        if curry(B).apply(xs[0]).evaluate(*xs[1:]) != B.evaluate(*xs):
            rt_fail += 1
        if uncurry(curry(B)).evaluate(*xs) != B.evaluate(*xs):
            rt_fail += 1
        est = multilinear_norm_estimate(B, (sp,) * 3, sp, 64, ctx.seed + i)
        if est.witness is not None:
            a = multilinear_ratio(B, (sp,) * 3, sp, est.witness)
            b = curried_ratio(curry(B), (sp,) * 3, sp, est.witness)
            ratio_err = max(ratio_err, abs(a - b) / max(abs(a), 1e-300))
    checks["curry_roundtrip_exact"] = _check(rt_fail == 0, rt_fail, 0)
    checks["curry_witness_transfer"] = _check(ratio_err <= 1e-12, ratio_err, 1e-12)
    return checks


def suite_atlas(ctx: Context) -> dict:
    sec = ctx.cfg["atlas"]
    atlas = ctx.atlas
    checks = {}
    tol = sec.get("cocycle_tol", 1e-9)
    rep = cocycle_check(atlas, sec.get("cocycle_samples", 20), ctx.seed, tol)
    checks["cocycle"] = _check(rep.passed, rep.max_residual, tol, rep.violations[:1] or None,
                               triples=rep.checked_triples, points=rep.checked_points,
                               inverse_residual=rep.max_inverse_residual)
    if "jets" in sec:
        js = sec["jets"]
        a, b = js["transition"]
        theta = transition(atlas, a, b)
        sp = atlas.chart(b).space
        j = Jet2(b, _vec(js["x"], sp), _vec(js["v"], sp), _vec(js["w"], sp))
        out = jet2_transition(theta, j, a)
        if "expected" in js:
            exp = js["expected"]
            err = max((out.x - _vec(exp["x"], sp)).sup_abs(), (out.v - _vec(exp["v"], sp)).sup_abs(),
                      (out.w - _vec(exp["w"], sp)).sup_abs())
            jtol = js.get("tol", 1e-8)
            checks["jet2_transition_value"] = _check(err <= jtol, err, jtol, out)
        res = jet2_additivity_residual(theta, j.x, (j.v, j.w), (j.v, j.w))
        need = js.get("additivity_min", 0.1)
        checks["jet2_additivity_obstruction"] = _check(res > need, res, need, {"x": j.x, "v": j.v, "w": j.w})
        # dyadic samples keep DTheta v exact for polynomial transitions
        rng = np.random.default_rng(ctx.seed + 4)
        region = atlas.overlap(a, b)
        worst, wit = 0.0, None
        n = theta.dim_in
        for _ in range(js.get("linearity_samples", 100)):
            x = _vec([c + float(rng.integers(-16, 17)) / 16 * region.radius / 2 for c in region.center], sp)
            x = atlas.chart(b).forward(x)
            v1 = sample_dyadic(rng, sp, n, bits=6, magnitude=4)
            v2 = sample_dyadic(rng, sp, n, bits=6, magnitude=4)
            t12 = tangent_map(theta, Jet1(b, x, v1 + v2)).v
            t1, t2 = tangent_map(theta, Jet1(b, x, v1)).v, tangent_map(theta, Jet1(b, x, v2)).v
            r = (t12 - (t1 + t2)).sup_abs()
            if r > worst or wit is None:
                worst, wit = r, {"x": x, "v1": v1, "v2": v2}
        checks["jet1_linearity_exact"] = _check(worst == 0.0, worst, 0.0, wit if worst else None)
    return checks


def _christoffel(ctx: Context) -> ChristoffelField:
    sec = ctx.cfg["christoffel"]
    sp = ctx.atlas.chart(sec["chart"]).space
    return ChristoffelField.from_coefficients(sec["chart"], sec["coefficients"], sec["dim"], sp)


def suite_compat(ctx: Context) -> dict:
    sec = ctx.cfg["christoffel"]
    atlas = ctx.atlas
    gb = _christoffel(ctx)
    beta = sec["chart"]
    chart = atlas.chart(beta)
    space = ctx.spaces[chart.space]
    rng = np.random.default_rng(ctx.seed + 5)
    n = sec.get("samples", 100)
    checks = {}
    ident = MCMap.identity(sec["dim"], chart.space)
    pts_b = [chart.forward(chart.domain.sample(rng, chart.space)) for _ in range(n)]
    r_id = compatibility_residual(gb, gb, ident, space, pts_b, 1, ctx.seed)
    itol = sec.get("identity_tol", 1e-12)
    checks["identity_transition"] = _check(r_id.value <= itol, r_id.value, itol)
    zero = ChristoffelField.zero(beta, chart.space)
    r_neg = compatibility_residual(zero, gb, ident, space, pts_b, 1, ctx.seed)
    checks["mismatch_detected"] = _check(r_neg.value > 0, r_neg.value, 0.0, r_neg.witness)
    if "transition" in sec:
        a, b = sec["transition"]
        if b != beta:
            raise ConfigError("transition source must be the Christoffel chart", "/christoffel/transition")
        theta = transition(atlas, a, b)
        ga = pushforward_christoffel(gb, theta, label=a)
        pts = atlas.sample_overlap(a, b, n, rng, chart=b)
        res = compatibility_residual(ga, gb, theta, space, pts, 1, ctx.seed)
        tol = sec.get("tol", 1e-7)
        checks["pushforward_compatibility"] = _check(res.value < tol, res.value, tol, res.witness)

    Q = lambda x: (lambda u: gb.at(x).evaluate(u, u))  # noqa: E731
    pol = christoffel_from_diagonal(Q, beta, pts_b[:4], 4, ctx.seed, chart.space, sec["dim"])
    diag_err, sym_err, pol_err = 0.0, 0.0, 0.0
    for x in pts_b:
        u = _vec(rng.normal(size=sec["dim"]), chart.space)
        v = _vec(rng.normal(size=sec["dim"]), chart.space)
        P = pol.at(x)
        diag_err = max(diag_err, (P.evaluate(u, u) - Q(x)(u)).sup_abs())
        sym_err = max(sym_err, (P.evaluate(u, v) - P.evaluate(v, u)).sup_abs())
        ref = 0.5 * (gb.at(x).evaluate(u, v) + gb.at(x).evaluate(v, u))
        pol_err = max(pol_err, (P.evaluate(u, v) - ref).sup_abs() / (1 + ref.sup_abs()))
    checks["polarization_diagonal_exact"] = _check(diag_err == 0.0, diag_err, 0.0)
    checks["polarization_symmetric_exact"] = _check(sym_err == 0.0, sym_err, 0.0)
    checks["polarization_matches_symmetrized"] = _check(pol_err <= 1e-12, pol_err, 1e-12)
    return checks


def suite_split(ctx: Context) -> dict:
    sec = ctx.cfg["christoffel"]
    gam = _christoffel(ctx)
    chart = ctx.atlas.chart(sec["chart"])
    sp, n = chart.space, sec["dim"]
    rng = np.random.default_rng(ctx.seed + 6)
    fails, wit = 0, None
    for _ in range(sec.get("split_samples", 100)):
        # dyadic coordinates keep Gamma(x)(v, v) and the sums exact
        x = _vec([float(k) / 8 for k in rng.integers(-16, 17, size=n)], sp)
        v = sample_dyadic(rng, sp, n, bits=4, magnitude=4)
        w = sample_dyadic(rng, sp, n, bits=4, magnitude=4)
        j = Jet2(chart.label, x, v, w)
        if merge_second_tangent(gam, *split_second_tangent(gam, j)) != j:
            fails += 1
            wit = wit or j
    checks = {"merge_split_identity": _check(fails == 0, fails, 0, wit)}
    # with x, v, w as above the other composite is exact as well
    fails2 = 0
    for _ in range(sec.get("split_samples", 100)):
        x = _vec([float(k) / 8 for k in rng.integers(-16, 17, size=n)], sp)
        first = Jet1(chart.label, x, sample_dyadic(rng, sp, n, bits=4, magnitude=4))
        second = Jet1(chart.label, x, sample_dyadic(rng, sp, n, bits=4, magnitude=4))
        if split_second_tangent(gam, merge_second_tangent(gam, first, second)) != (first, second):
            fails2 += 1
    checks["split_merge_identity"] = _check(fails2 == 0, fails2, 0)
    return checks


def suite_ode(ctx: Context) -> dict:
    sec = ctx.cfg["ode"]
    rows = sec["A"]
    k = len(rows)
    if any(len(r) != k for r in rows):
        raise ConfigError("A must be square", "/ode/A")
    asts = [[expr_dsl.parse(s) for s in row] for row in rows]
    lo, hi = sec.get("interval", [-1.0, 1.0])

    def A(t):
        return FiniteMatrix(tuple(tuple(expr_dsl.evaluate(e, {"t": t}) for e in row) for row in asts))

    ode = OdeSystem(A, (lo, hi))
    rng = np.random.default_rng(ctx.seed + 7)
    back = connection_to_ode(ode_to_connection(ode), (lo, hi))
    fails, wit = 0, None
    ts = rng.uniform(lo, hi, size=sec.get("samples", 50))
    for t in ts:
        u = _vec(rng.normal(size=k), "F")
        if back(float(t)).apply(u) != ode(float(t)).apply(u):
            fails += 1
            wit = wit or {"t": float(t), "u": u}
    checks = {"roundtrip_exact": _check(fails == 0, fails, 0, wit)}
    if "transfer_chart" in sec:
        tc = sec["transfer_chart"]
        chart = Chart.from_expressions("beta", tc["forward"], tc["inverse"], space="R")
        a_beta = connection_to_ode(ode_to_connection(ode, chart))
        inv = chart.inverse.without_analytic()
        worst, wit = 0.0, None
        for s in ts:
            # stay where the pulled-back time is inside the interval
            t = float(chart.forward(_vec([s], "R")).coord(1))
            tb = float(chart.inverse(_vec([t], "R")).coord(1))
            dphi = directional_derivative(inv, _vec([t], "R"), _vec([1.0], "R")).value.coord(1)
            u = _vec(rng.normal(size=k), "F")
            expected = dphi * ode(tb).apply(u)
            err = (a_beta(t).apply(u) - expected).sup_abs() / (1 + expected.sup_abs())
            if err > worst or wit is None:
                worst, wit = err, {"t": t, "u": u}
        tol = sec.get("transfer_tol", 1e-9)
        checks["chart_transfer"] = _check(worst <= tol, worst, tol, wit)
    return checks


def suite_integrate(ctx: Context) -> dict:
    sec = ctx.cfg["picard"]
    fld = ctx.field(sec["field"])
    p0 = _vec(sec["p0"], fld.space.id)
    r = sec.get("r", 1.0)
    checks = {}
    fld.check_bounds(p0, r, 64, ctx.seed)
    checks["declared_bounds_spot_check"] = _check(True)
    prob = PicardProblem(fld, p0, sec.get("t0", 0.0), r, ctx.step(sec), ctx.tolerance(sec))
    sol = picard_solve(prob, sec.get("max_iters", 60))
    checks["bound_soundness"] = _check(sol.sound, max((s - b for s, b in zip(sol.successive_diffs,
                                                                              sol.certified_bound)),
                                                       default=0.0),
                                       sol.quadrature_error_estimate)
    checks["residual_finite"] = _check(math.isfinite(sol.residual_constant), sol.residual,
                                       residual_constant=sol.residual_constant)
    if "oracle" in sec:
        err = 0.0
        for t, row in zip(sol.times, sol.final):
            exact = np.array(_eval_texts(sec["oracle"], float(t)))
            diff = _vec(row - exact[: len(row)], fld.space.id)
            err = max(err, fld.space.norm(diff))
        checks["oracle_within_certificate"] = _check(err <= sol.tolerance, err, sol.tolerance)
    if "csv" in sec:
        sol.write_csv(ctx.out / sec["csv"])
    if "certificate" in sec:
        sol.write_certificate(ctx.out / sec["certificate"])
    checks["certificate"] = _check(True, **{k: v for k, v in sol.certificate().items() if k != "parameters"})
    return checks


def suite_flow(ctx: Context) -> dict:
    sec = ctx.cfg["flow"]
    fld = ctx.field(sec["field"])
    sid = fld.space.id
    p0, q, t = _vec(sec["p0"], sid), _vec(sec["q"], sid), float(sec["t"])
    r = sec.get("r", 1.0)
    kw = {"grid_step": ctx.step(sec), "tol": ctx.tolerance(sec)}
    checks = {"alpha": _check(True, horizon(fld.R_lip, fld.L_sup, r, flow=True))}
    z, _ = flow_with_certificate(fld, q, 0.0, p0, r, **kw)
    checks["time_zero_identity"] = _check(z == q)
    val, sol = flow_with_certificate(fld, q, t, p0, r, **kw)
    tol = sol.tolerance
    if "oracle" in sec:
        exact = _vec(_eval_texts(sec["oracle"], t), sid)
        err = fld.space.distance(val, exact)
        checks["oracle_within_certificate"] = _check(err <= tol, err, tol, val)
    if "semigroup" in sec:
        s1, s2 = sec["semigroup"]
        mid, sol1 = flow_with_certificate(fld, q, s1, p0, r, **kw)
        two, sol2 = flow_with_certificate(fld, mid, s2, p0, r, **kw)
        one, sol3 = flow_with_certificate(fld, q, s1 + s2, p0, r, **kw)
        gap = fld.space.distance(two, one)
        stol = 2 * max(sol1.tolerance + sol2.tolerance, sol3.tolerance)
        checks["semigroup"] = _check(gap <= stol, gap, stol)
    return checks


def suite_uniqueness(ctx: Context) -> dict:
    sec = ctx.cfg["uniqueness"]
    atlas = ctx.atlas
    a, b = sec["charts"]
    fields = {lab: ctx.field(name) for lab, name in sec["fields"].items()}
    p = _vec(sec["point"], atlas.chart(b).space)
    rep = uniqueness_overlap_check(atlas, fields, a, b, p, sec["t_range"], sec.get("r", 1.0), ctx.step(sec),
                                   ctx.tolerance(sec), 16, ctx.seed)
    checks = {"overlap_agreement": _check(rep.passed, rep.deviation, rep.tolerance,
                                          probe_residual=rep.probe_residual, horizon=rep.horizon)}
    if "reject" in sec:
        bad = {lab: ctx.field(name) for lab, name in sec["reject"].items()}
        try:
            transformation_probe(atlas, a, b, bad[a], bad[b], 16, ctx.seed)
            checks["inconsistent_pair_rejected"] = _check(False)
        except FrechetKitError as exc:
            checks["inconsistent_pair_rejected"] = _check(True, witness=getattr(exc, "witness", None),
                                                          reason=str(exc))
    return checks


RUNNERS = {
    "verify-metric": suite_metric,
    "verify-ops": suite_ops,
    "verify-atlas": suite_atlas,
    "compat-check": suite_compat,
    "split-roundtrip": suite_split,
    "ode-roundtrip": suite_ode,
    "integrate": suite_integrate,
    "flow": suite_flow,
    "uniqueness": suite_uniqueness,
}


def run_suites(cfg: dict, suites, seed: int, out: Path, grid_step=None, tol=None) -> dict:
    """Run the named suites; a missing config section marks that suite as skipped."""
    ctx = Context(cfg, seed, out, grid_step, tol)
    results = {}
    for name in sorted(set(suites)):
        if SECTION[name] not in cfg:
            results[name] = {"status": "skipped", "reason": f"config has no {SECTION[name]!r} section"}
            continue
        try:
            checks = RUNNERS[name](ctx)
            ok = all(c["passed"] for c in checks.values())
            results[name] = {"status": "pass" if ok else "fail", "checks": checks}
        except ConfigError:
            raise
        except FrechetKitError as exc:
            results[name] = {"status": "fail", "error": type(exc).__name__, "message": str(exc),
                             "witness": getattr(exc, "witness", None)}
    return {
        "schema_version": 1,
        "seed": seed,
        "suites": results,
        "passed": all(r["status"] == "pass" for r in results.values() if r["status"] != "skipped"),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frechetkit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUITES + ("all",))
    ap.add_argument("--config", help="JSON experiment config (default: bundled example)")
    ap.add_argument("--out", default="frechetkit-out", help="output directory")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--suite", action="append", choices=SUITES,
                    help="suite to run with 'all' (repeatable)")
    ap.add_argument("--grid-step", type=float, help="override the integration grid step")
    ap.add_argument("--tol", type=float, help="override the Picard stopping tolerance")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.grid_step is not None and not args.grid_step > 0:
            raise ConfigError("grid step must be positive", "--grid-step")
        seed = args.seed if args.seed is not None else cfg["seed"]
        if args.command == "all":
            suites = args.suite or cfg.get("suites") or list(SUITES)
        else:
            suites = [args.command]
            if SECTION[args.command] not in cfg:
                raise ConfigError(f"missing section for {args.command}", f"/{SECTION[args.command]}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = run_suites(cfg, suites, seed, out, args.grid_step, args.tol)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    text = dumps_report(report)
    (out / "report.json").write_text(text)
    for name, res in sorted(report["suites"].items()):
        print(f"{res['status'].upper():7s} {name}")
    print(f"report: {out / 'report.json'}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
