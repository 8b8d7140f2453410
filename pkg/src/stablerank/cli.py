"""Command-line front end.

Exit codes: 0 success, 1 certification failure (structured error JSON on
stdout), 2 I/O error, 3 configuration error.
"""

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

from . import isometry, riesz, witness
from .errors import BudgetError, CertificationError, StableRankError
from .nest import (NestOperator, NestSpec, matrix_from_json, matrix_to_json, random_member,
                   validate_growth)

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3

COMMANDS = ("witness-rtsr2", "witness-megablock", "witness-obstruction", "riesz-corner", "validate")


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    command: str
    dims: tuple = None
    nest_file: str = None
    seed: int = 0
    eps: float = 0.1
    tol: float = None
    n: int = 2
    depth: int = 3
    nodes: int = riesz.DEFAULT_NODES
    out: str = None
    gamma: float = 1.0
    J: int = 1
    family: str = "fock"
    dim: int = 6
    pad: int = 2
    sweep: int = 1
    jobs: int = 1
    input: str = None
    experimental: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.tol is None:
            self.tol = witness.default_tol()
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.sweep < 1 or self.jobs < 1:
            raise ConfigError("sweep and jobs must be positive")

    @classmethod
    def from_mapping(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def spec(self):
        if self.dims:
            return NestSpec(tuple(self.dims))
        if self.nest_file:
            with open(self.nest_file) as fh:
                return NestSpec.from_json(json.load(fh))
        raise ConfigError("give --dims or --nest-file")


def write_json_atomic(path, obj):
    text = json.dumps(obj)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def operator_pair(spec, seed):
    """The seeded pair ``(A, B)`` used by the witness commands."""
    return random_member(spec, 2 * seed), random_member(spec, 2 * seed + 1)


def _certificate(cfg, seed):
    spec = cfg.spec()
    A, B = operator_pair(spec, seed)
    if cfg.command == "witness-rtsr2":
        cert = witness.right_invertible_pair(A, B, cfg.eps, cfg.tol,
                                             require_growth=not cfg.experimental)
    else:
        cert = witness.right_invertible_pair_megablock(A, B, cfg.eps, cfg.gamma, cfg.J, cfg.tol)
    return A, B, cert


def _summary(cert, seed):
    return {
        "seed": seed,
        "residual": cert.residual,
        "pert_A": cert.pert_A,
        "pert_B": cert.pert_B,
        "delta": cert.delta,
        "P_ranks": list(cert.P_ranks),
        "identity_residual": cert.extras["identity_residual"],
    }


def _sweep_one(args):
    cfg, seed = args
    try:
        return _summary(_certificate(cfg, seed)[2], seed)
    except StableRankError as exc:
        return {"seed": seed, "error": exc.kind, "message": str(exc), **exc.details()}


def run_experiment(cfg):
    """Run the construction on a nest that may violate the growth condition.

    The report records what happened and claims nothing about stable rank.
    """
    report = {"artifact": "experiment", "command": cfg.command, "seed": cfg.seed,
              "eps": cfg.eps, "dims": list(cfg.spec().atom_dims),
              "growth_condition": validate_growth(cfg.spec())}
    try:
        cert = _certificate(cfg, cfg.seed)[2]
    except (BudgetError, CertificationError) as exc:
        report.update(outcome=exc.kind, message=str(exc), **exc.details())
    else:
        report.update(outcome="certified", **_summary(cert, cfg.seed))
    return report, EXIT_OK


def run_witness(cfg):
    if cfg.experimental:
        if cfg.command != "witness-rtsr2" or cfg.sweep > 1:
            raise ConfigError("--experimental applies to single witness-rtsr2 runs")
        return run_experiment(cfg)
    if cfg.sweep > 1:
        tasks = [(cfg, cfg.seed + i) for i in range(cfg.sweep)]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs) as pool:
                rows = list(pool.map(_sweep_one, tasks))
        else:
            rows = [_sweep_one(t) for t in tasks]
        artifact = {"artifact": "sweep", "command": cfg.command, "eps": cfg.eps,
                    "dims": list(cfg.spec().atom_dims), "runs": rows}
        failed = [r for r in rows if "error" in r]
        return artifact, (EXIT_FAIL if failed else EXIT_OK)
    A, B, cert = _certificate(cfg, cfg.seed)
    artifact = {"artifact": "certificate", "command": cfg.command, "seed": cfg.seed,
                **cert.to_json(), "A": matrix_to_json(A.entries), "B": matrix_to_json(B.entries)}
    return artifact, EXIT_OK


def run_obstruction(cfg):
    if cfg.family == "fock":
        fam = isometry.fock_left_shifts(cfg.n, cfg.depth)
    elif cfg.family == "prime-coisometry":
        fam = isometry.prime_coisometry_pair(cfg.spec())
    elif cfg.family == "prime-shift":
        spec = cfg.spec()
        fam = isometry.prime_shift_pair(spec.num_atoms, list(spec.atom_dims))
    else:
        raise ConfigError(f"unknown family {cfg.family!r}")
    U, V = fam.members[0], fam.members[1]
    rows = []
    k = 1
    while True:
        try:
            row = isometry.orthogonal_row_family(U, V, k)
        except StableRankError:
            break
        rows.append({"n": k, "defect": row.defect, "index_proxy": row.index_proxy,
                     "domain_dim": len(row.domain), "next_orthogonal": row.next_orthogonal})
        k += 1
    report = {
        "artifact": "family",
        "family": cfg.family,
        "exact_isometries": isometry.check_family(fam),
        "row_families": rows,
        **fam.to_json(),
    }
    if fam.domain_dim is not None and len({m.domain for m in fam.members}) == 1:
        report["cuntz_defect_rank"] = isometry.cuntz_defect(fam)[1]
    return report, EXIT_OK


def run_riesz(cfg):
    A, B, eps, M = riesz.random_instance(cfg.dim, cfg.pad, cfg.seed, cfg.eps, cfg.nodes)
    report = riesz.riesz_corner(A, B, cfg.pad, eps, cfg.nodes, M)
    artifact = {"artifact": "riesz", "seed": cfg.seed, "pad": cfg.pad, **report.to_json(),
                "A": matrix_to_json(A), "B": matrix_to_json(B)}
    return artifact, EXIT_OK


def riesz_checks(report):
    """Invariants of a corner report, as name -> bool."""
    return {
        "idempotent": report.idempotency_residual <= 1e-8,
        "commutes": report.commutation_residual <= 1e-8,
        "near_E": report.projection_distance <= report.eps_prime,
        "similarity": abs(report.similarity_distance - report.projection_distance) <= 1e-12,
        "off_corner": report.off_corner <= 1e-8,
        "B1_invertible": report.B1_min_singular > 1e-12,
        "corner_close": report.corner_distance < report.eps + report.eps_second,
        "converged": report.convergence < 1e-6,
    }


def run_validate(cfg):
    if not cfg.input:
        raise ConfigError("validate needs an input file")
    with open(cfg.input) as fh:
        obj = json.load(fh)
    try:
        checks = _validate_artifact(obj, cfg)
    except (KeyError, TypeError, ValueError):
        checks = {"well_formed": False}
    ok = all(checks.values())
    return {"artifact": "validation", "input": obj.get("artifact"), "valid": ok,
            "checks": checks}, (EXIT_OK if ok else EXIT_FAIL)


def _validate_artifact(obj, cfg):
    kind = obj.get("artifact")
    if kind == "certificate":
        spec = NestSpec(tuple(obj["dims"]))
        A = NestOperator(spec, matrix_from_json(obj["A"]))
        B = NestOperator(spec, matrix_from_json(obj["B"]))
        cert = witness.PerturbationCertificate.from_json(obj)
        ok = witness.validate_certificate(cert, A, B, cfg.tol if cfg.tol else None)
        checks = {"certificate": ok}
    elif kind == "family":
        fam = isometry.IsometryFamily.from_json(obj)
        checks = {"exact_isometries": isometry.check_family(fam)}
    elif kind == "riesz":
        A, B = matrix_from_json(obj["A"]), matrix_from_json(obj["B"])
        report = riesz.riesz_corner(A, B, int(obj["pad"]), float(obj["eps"]),
                                    int(obj["quad_nodes"]))
        checks = riesz_checks(report)
    else:
        raise ConfigError(f"unknown artifact kind {kind!r}")
    return checks


def run(cfg):
    """Execute one configuration; returns ``(artifact, exit_code)``."""
    if cfg.command in ("witness-rtsr2", "witness-megablock"):
        return run_witness(cfg)
    if cfg.command == "witness-obstruction":
        return run_obstruction(cfg)
    if cfg.command == "riesz-corner":
        return run_riesz(cfg)
    return run_validate(cfg)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _dims(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from exc


def build_parser():
    parser = _Parser(prog="stablerank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        p.add_argument("--out", help="artifact path (default: stdout)")
        p.add_argument("--tol", type=float)
        p.add_argument("--seed", type=int)

    def nest(p):
        p.add_argument("--dims", type=_dims, help="comma-separated atom dimensions")
        p.add_argument("--nest-file", dest="nest_file")

    for name in ("witness-rtsr2", "witness-megablock"):
        p = sub.add_parser(name)
        common(p)
        nest(p)
        p.add_argument("--eps", type=float)
        p.add_argument("--sweep", type=int, help="number of consecutive seeds")
        p.add_argument("--jobs", type=int)
        if name == "witness-megablock":
            p.add_argument("--gamma", type=float)
            p.add_argument("--J", type=int)
        else:
            p.add_argument("--experimental", action="store_const", const=True,
                           help="skip the growth gate and report the outcome")

    p = sub.add_parser("witness-obstruction")
    common(p)
    nest(p)
    p.add_argument("--family", choices=("fock", "prime-coisometry", "prime-shift"))
    p.add_argument("--n", type=int)
    p.add_argument("--depth", type=int)

    p = sub.add_parser("riesz-corner")
    common(p)
    p.add_argument("--dim", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--nodes", type=int)

    p = sub.add_parser("validate")
    common(p)
    p.add_argument("input")
    return parser


def parse_config(argv):
    args = vars(build_parser().parse_args(argv))
    data = {}
    path = args.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in args.items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def main(argv=None):
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}))
        return EXIT_CONFIG
    try:
        artifact, code = run(cfg)
        if cfg.out:
            write_json_atomic(cfg.out, artifact)
        else:
            print(json.dumps(artifact))
        if cfg.out and code != EXIT_OK:
            print(json.dumps({"error": "certification", "artifact": cfg.out}))
        return code
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}))
        return EXIT_CONFIG
    except StableRankError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc), **exc.details()}))
        return EXIT_FAIL
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "io", "message": str(exc)}))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
