"""``mrl`` command-line front end.

Exit codes: 0 success, 1 input error, 2 numerical error. Every report is a
JSON object carrying ``format_version``, ``seed`` and the resolved ``config``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import FORMAT_VERSION, __version__
from . import well_structure as ws
from .errors import BadParams, InputError, NumericalError
from .fields import analysis
from .fields.degree import degree_at
from .fields.generators import gen
from .fields.grid import ball_mask, atomic_write_json, dumps, read_field, write_field
from .fields.scaling import resolve_config, scaling_experiment
from .fields.truncation import lipschitz_truncate
from .registration import PointCorrespondence, recover_orthogonal_affine


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; bad flags are input errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from e


def load_wells(path: str) -> ws.WellFamily:
    obj = _load_json(path)
    try:
        n = int(obj["n"])
        wells = obj["wells"]
        if n < 1 or not isinstance(wells, list):
            raise ValueError("n must be positive and wells a list")
        mats = []
        for w in wells:
            a = np.asarray(w, dtype=float)
            if a.size != n * n:
                raise ValueError(f"each well needs {n * n} entries")
            mats.append(a.reshape(n, n))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed wells file {path}: {e}") from e
    return ws.WellFamily(mats)


def parse_params(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise BadParams(f"parameter {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        k = k.strip()
        if k in out:
            raise BadParams(f"parameter {k!r} given twice")
        out[k] = _coerce(v.strip())
    return out


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as e:
        raise BadParams(f"cannot parse vector {text!r}") from e


def _report(args, config: dict, body: dict) -> dict:
    out = {"format_version": FORMAT_VERSION, "version": __version__, "command": args.route, "seed": args.seed, "config": config}
    out.update(body)
    return out


def _emit(args, report: dict) -> None:
    if args.out:
        atomic_write_json(Path(args.out), report)
    else:
        sys.stdout.write(dumps(report) + "\n")


def _field_wells(args, f) -> ws.WellFamily:
    if getattr(args, "wells", None):
        return load_wells(args.wells)
    meta = f.meta
    try:
        if "well_family" in meta:
            return ws.WellFamily.from_json(meta["well_family"])
        if "wells" in meta:
            return ws.WellFamily([np.asarray(w, dtype=float).reshape(f.n, f.n) for w in meta["wells"]])
        if "R" in meta:
            return ws.WellFamily([np.asarray(meta["R"], dtype=float).reshape(f.n, f.n)])
    except (TypeError, ValueError) as e:
        raise InputError(f"field metadata holds malformed wells: {e}") from e
    raise BadParams("no wells given and none recorded in the field; pass --wells")


def _check_index(i: int, K: ws.WellFamily) -> int:
    if not 0 <= i < K.m:
        raise BadParams(f"well index {i} out of range for {K.m} wells")
    return i


# ----------------------------------------------------------------- commands

def cmd_wells_analyze(args) -> dict:
    K = load_wells(args.wells_file)
    rep = ws.compatibility_report(K, seed=args.seed, n_samples=args.samples, refine_steps=args.refine)
    config = {"wells": K.to_json(), "samples": args.samples, "refine": args.refine}
    return _report(args, config, {"report": rep.to_json()})


def cmd_wells_connect(args) -> dict:
    K = load_wells(args.wells_file)
    i, j = _check_index(args.i, K), _check_index(args.j, K)
    if i == j:
        raise BadParams("need two distinct wells")
    c = ws.connection(K, i, j)
    config = {"wells": K.to_json(), "i": i, "j": j}
    return _report(args, config, {"connected": c is not None, "connection": None if c is None else c.to_json()})


def cmd_field_gen(args) -> dict:
    if not args.out:
        raise BadParams("field gen needs --out")
    K = load_wells(args.wells) if args.wells else None
    params = parse_params(args.params)
    f = gen(args.kind, params, N=args.N, seed=args.seed, wells=K, n=args.n)
    if K is not None:
        f.meta["well_family"] = K.to_json()
    head = write_field(f, args.out)
    config = {"kind": args.kind, "params": params, "N": args.N, "n": f.n, "wells": None if K is None else K.to_json()}
    report = _report(args, config, {"field": str(head), "meta": f.meta})
    args.out = None
    if args.report:
        args.out = args.report
    return report


def cmd_field_energy(args) -> dict:
    f = read_field(args.field)
    K = _field_wells(args, f)
    e = analysis.energy(f, K, args.sigma, args.p, args.q)
    config = {"field": args.field, "wells": K.to_json(), "sigma": args.sigma, "p": args.p, "q": args.q}
    return _report(args, config, {"energy": e.to_json()})


def cmd_field_majority(args) -> dict:
    f = read_field(args.field)
    K = _field_wells(args, f)
    r = analysis.majority_phase(f, K, args.p, args.q, n_alpha=args.n_alpha)
    config = {"field": args.field, "wells": K.to_json(), "p": args.p, "q": args.q, "n_alpha": args.n_alpha}
    return _report(args, config, {"majority": r.to_json()})


def cmd_field_pairs(args) -> dict:
    f = read_field(args.field)
    K = _field_wells(args, f)
    i = _check_index(args.i, K)
    if not args.eps > 0:
        raise BadParams("--eps must be positive")
    s = analysis.pair_statistics(f, K, i, args.eps, C=args.C, n_pairs=args.n_pairs, seed=args.seed)
    config = {"field": args.field, "wells": K.to_json(), "i": i, "eps": args.eps, "C": args.C, "n_pairs": args.n_pairs}
    return _report(args, config, {"pairs": s.to_json()})


def cmd_field_truncate(args) -> dict:
    f = read_field(args.field)
    r = lipschitz_truncate(f, args.lam, q=args.q)
    body = {"stats": r.stats, "E_count": int(r.E.sum())}
    if args.field_out:
        body["field"] = str(write_field(r.w, args.field_out))
    config = {"field": args.field, "lambda": args.lam, "q": args.q, "field_out": args.field_out}
    return _report(args, config, body)


def cmd_field_degree(args) -> dict:
    f = read_field(args.field)
    xi = _parse_vector(args.xi)
    if xi.shape != (f.n,):
        raise BadParams(f"--xi needs {f.n} components")
    if not 0 < args.radius <= 1:
        raise BadParams("--radius must lie in (0, 1]")
    region = ball_mask(f.n, f.N, args.radius)
    d = degree_at(f, region, xi)
    config = {"field": args.field, "xi": xi.tolist(), "radius": args.radius}
    return _report(args, config, {"degree": d})


def cmd_scaling_run(args) -> dict:
    config = _load_json(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise InputError("scaling config must be a JSON object")
    config = dict(config)
    for key in ("p", "q"):
        if getattr(args, key) is not None:
            config[key] = getattr(args, key)
    if args.sigma:
        config["sigmas"] = [float(s) for s in args.sigma]
    config.setdefault("seed", args.seed)
    args.seed = config["seed"]
    resolved = resolve_config(config)
    rep = scaling_experiment(resolved)
    return _report(args, resolved, {"scaling": rep.to_json()})


def cmd_register(args) -> dict:
    obj = _load_json(args.points)
    try:
        pc = PointCorrespondence.from_json(obj)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed points file {args.points}: {e}") from e
    lmap, res = recover_orthogonal_affine(pc)
    det_ratio = float(np.linalg.det(lmap.O @ np.linalg.inv(pc.A)))
    body = {
        "map": lmap.to_json(),
        "residual": res,
        "distortion": pc.distortion,
        "inradius": pc.b,
        "det_OAinv": det_ratio,
        "orientation": "reflected" if det_ratio < 0 else "proper",
    }
    return _report(args, pc.to_json(), body)


# ------------------------------------------------------------------ parsing

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="write the report here instead of stdout")

    ap = _Parser(prog="mrl", description="Multiwell rigidity toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    top = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)

    wells = top.add_parser("wells", help="well-family algebra")
    wsub = wells.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = wsub.add_parser("analyze", parents=[common])
    p.add_argument("wells_file")
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--refine", type=int, default=200)
    p.set_defaults(fn=cmd_wells_analyze)
    p = wsub.add_parser("connect", parents=[common])
    p.add_argument("wells_file")
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--j", type=int, default=1)
    p.set_defaults(fn=cmd_wells_connect)

    field = top.add_parser("field", help="grid-field experiments")
    fsub = field.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = fsub.add_parser("gen", parents=[common])
    p.add_argument("--kind", required=True)
    p.add_argument("--params", nargs="*", default=[], metavar="K=V")
    p.add_argument("--N", type=int, default=65)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--wells")
    p.add_argument("--report", help="also write a generation report")
    p.set_defaults(fn=cmd_field_gen)

    def field_cmd(name, fn):
        p = fsub.add_parser(name, parents=[common])
        p.add_argument("field")
        p.set_defaults(fn=fn)
        return p

    p = field_cmd("energy", cmd_field_energy)
    p.add_argument("--wells")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p = field_cmd("majority", cmd_field_majority)
    p.add_argument("--wells")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--n-alpha", dest="n_alpha", type=int, default=64)
    p = field_cmd("pairs", cmd_field_pairs)
    p.add_argument("--wells")
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--n-pairs", dest="n_pairs", type=int, default=20000)
    p = field_cmd("truncate", cmd_field_truncate)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--field-out", dest="field_out")
    p = field_cmd("degree", cmd_field_degree)
    p.add_argument("--xi", required=True, help="comma-separated target point")
    p.add_argument("--radius", type=float, default=0.9)

    scaling = top.add_parser("scaling", help="rigidity scaling experiment")
    ssub = scaling.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ssub.add_parser("run", parents=[common])
    p.add_argument("config", nargs="?")
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--sigma", type=float, nargs="*")
    p.set_defaults(fn=cmd_scaling_run)

    p = top.add_parser("register", parents=[common], help="affine recovery from point data")
    p.add_argument("points")
    p.set_defaults(fn=cmd_register, action=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.route = " ".join(x for x in (args.group, args.action) if x)
        report = args.fn(args)
        _emit(args, report)
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    except InputError as e:
        print(f"mrl: input error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"mrl: numerical error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as e:
        print(f"mrl: numerical error: {e}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError) as e:
        print(f"mrl: input error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
