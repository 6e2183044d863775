"""Command-line interface: ``lipcert <subcommand> ...``.

Every subcommand writes one JSON report (stdout or ``--out``) carrying the
schema version, the resolved run configuration and a timestamp.  Tables for
plotting go to optional CSV files.  Exit status: 0 success, 1 computational
error (JSON description on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"


@dataclass
class RunConfig:
    subcommand: str
    spec: str | None = None
    seed: int = 0
    tolerance: float | None = None
    samples: int | None = None
    outputs: dict = field(default_factory=dict)
    threads: int = 1
    options: dict = field(default_factory=dict)


def _threads():
    try:
        return max(1, int(os.environ.get("LIPCERT_THREADS", "1")))
    except ValueError:
        return 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(cfg, body, out):
    report = {"schema_version": SCHEMA_VERSION, "config": asdict(cfg), **body,
              "timestamp": datetime.now(timezone.utc).isoformat()}
    text = json.dumps(_jsonable(report), indent=2, sort_keys=False)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_net(path):
    from .netspec import load_spec, normalize_skip_connections

    return normalize_skip_connections(load_spec(path))


def _load_signal(path):
    from .netspec import read_array

    path = Path(path)
    if path.suffix == ".json":
        return np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=float)
    return read_array(path)


def _load_samples(arg, net, n, seed):
    from .stochastic import generator

    if arg:
        files = sorted(p for p in Path(arg).iterdir() if p.suffix in (".bin", ".json"))
        if not files:
            raise ValueError(f"no .bin or .json signals in {arg}")
        return [_load_signal(p) for p in files]
    rng = generator(seed, 11)
    return list(rng.standard_normal((n,) + tuple(net.input_shape)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_bound(args, cfg):
    from .bounds import corollary_report, solve_lipschitz_lp
    from .spectral import DEFAULT_SAMPLES, network_bessel

    net = _load_net(args.spec)
    triples = network_bessel(net, args.grid or DEFAULT_SAMPLES)
    report = corollary_report(triples) if args.corollaries_only else solve_lipschitz_lp(triples)
    return {"layers": [dict(layer=m + 1, **t.as_dict()) for m, t in enumerate(triples)],
            "certificate": report.as_dict()}


def cmd_bessel(args, cfg):
    from .spectral import DEFAULT_SAMPLES, network_bessel

    net = _load_net(args.spec)
    triples = network_bessel(net, args.grid or DEFAULT_SAMPLES)
    return {"layers": [dict(layer=m + 1, **t.as_dict()) for m, t in enumerate(triples)]}


def cmd_forward(args, cfg):
    from .forward import forward
    from .netspec import write_array

    net = _load_net(args.spec)
    bundle = forward(net, _load_signal(args.signal))
    outputs = {}
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for (m, n), sig in bundle.features.items():
            name = f"feature_l{m}_n{n}.bin"
            write_array(out_dir / name, sig)
            outputs[f"{m},{n}"] = name
    return {
        "norm": float(bundle.norm()),
        "features": [{"layer": m, "node": n, "shape": list(sig.shape), "norm": float(np.linalg.norm(sig)),
                      "file": outputs.get(f"{m},{n}")} for (m, n), sig in bundle.features.items()],
    }


def cmd_local(args, cfg):
    from .bounds import certify
    from .local import local_constants

    net = _load_net(args.spec)
    samples = _load_samples(args.samples, net, args.n, args.seed)
    tol = args.tol or 1e-12
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        chunks = list(pool.map(lambda f: float(local_constants(net, [f], tol)[0]), samples))
    vals = np.array(chunks)
    L = certify(net)[1].lp_bound
    if args.histogram:
        _write_csv(args.histogram, ["sample", "sigma_max"], enumerate(vals.tolist()))
    return {"sigma_max": vals.tolist(), "max_local": float(vals.max()), "certified_lipschitz_constant": math.sqrt(L),
            "power_iteration_tolerance": tol}


def _load_classifier(path, n_features):
    from .local import LinearClassifier

    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        W = np.asarray(doc["weights"], dtype=float)
        b = np.asarray(doc.get("bias", np.zeros(len(W))), dtype=float)
    else:
        W = _load_signal(path)
        b = np.zeros(len(W))
    if W.ndim != 2 or W.shape[1] != n_features:
        raise ValueError(f"classifier weights must be (classes, {n_features}), got {W.shape}")
    return LinearClassifier(W, b)


def cmd_adversarial(args, cfg):
    from .forward import forward
    from .local import random_direction_comparison
    from .stochastic import generator

    net = _load_net(args.spec)
    f = _load_signal(args.input) if args.input else generator(args.seed, 12).standard_normal(net.input_shape)
    clf = _load_classifier(args.classifier, forward(net, f).flatten().size)
    h_max = args.h_max or 10.0 * float(np.linalg.norm(f))
    res = random_direction_comparison(net, clf, f, h_max, args.directions, generator(args.seed, 13))
    if args.csv:
        rows = [("principal", res["principal"])] + [(f"random_{i}", h) for i, h in enumerate(res["random"])]
        _write_csv(args.csv, ["direction", "fooling_magnitude"], rows)
    return {"h_max": h_max, "bisection_tolerance": 1e-3 * h_max, **res}


def cmd_stationary(args, cfg):
    from . import stochastic as st
    from .bounds import certify

    net = _load_net(args.spec)
    spectrum = _load_signal(args.spectrum) if args.spectrum else np.ones(net.input_shape)
    pc = st.ProcessConfig(spectrum, tuple(net.input_shape), args.n, args.seed)
    L = certify(net)[1].lp_bound
    body = {"L": L}
    if not net.has_dilation():
        qc = st.ProcessConfig(spectrum, tuple(net.input_shape), args.n, args.seed + 1)
        body["theorem2"] = st.verify_theorem2(net, pc, qc, L=L).as_dict()
        body["stationarity"] = st.test_stationarity(net, pc, shifts=(1, 2, 3))
    else:
        body["theorem2"] = None
        body["note"] = "network has a dilation; moment checks need a dilation-free network"
    t_grid = np.linspace(0.0, 4.0 * math.sqrt(pc.energy * max(L, 1e-300)), 9)
    prof = st.concentration_profile(net, pc, t_grid, L=L)
    if args.csv:
        _write_csv(args.csv, ["t", "fraction", "bound", "standard_error"],
                   [(r["t"], r["fraction"], r["bound"], r["standard_error"]) for r in prof["rows"]])
    body["concentration"] = prof
    return body


def _load_class(path, label):
    from .discriminant import ClassModel
    from .netspec import Filter

    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    mean = doc["mean"]
    if isinstance(mean, dict):
        mean = _load_signal(path.parent / mean["file"])
    col = doc["coloring"]
    return ClassModel(np.asarray(mean, dtype=float), Filter(col["taps"], col.get("origin")), doc.get("label", label))


def cmd_discriminant(args, cfg):
    from .discriminant import discriminant, error_vs_discriminant

    c1, c2 = _load_class(args.class1, 0), _load_class(args.class2, 1)
    if args.nets:
        nets = [_load_net(p) for p in sorted(Path(args.nets).glob("*.json"))]
        table = error_vs_discriminant(nets, c1, c2, args.n, args.n_test or args.n, seed=args.seed)
        if args.csv:
            _write_csv(args.csv, ["net", "s", "s_lip", "error"],
                       [(r["net"], r["s"], r["s_lip"], r["error"]) for r in table["rows"]])
        return table
    if not args.spec:
        raise ValueError("give a spec file or --nets")
    return discriminant(_load_net(args.spec), c1, c2, args.n, seed=args.seed).as_dict()


def cmd_toy(args, cfg):
    from .spectral import DEFAULT_SAMPLES
    from .toy import toy_report

    return toy_report(args.grid or DEFAULT_SAMPLES)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="lipcert", description="Lipschitz certificates for CNN graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext, spec=True):
        p = sub.add_parser(name, help=helptext, description=helptext)
        if spec:
            p.add_argument("spec", help="network spec (JSON)")
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.set_defaults(func=fn)
        return p

    p = add("bound", cmd_bound, "Bessel triples, LP bound and corollaries")
    p.add_argument("--corollaries-only", action="store_true", help="skip the linear program")
    p.add_argument("--grid", type=int, help="dense grid size for closed-form profiles")

    p = add("bessel", cmd_bessel, "per-layer Bessel triples")
    p.add_argument("--grid", type=int, help="dense grid size for closed-form profiles")

    p = add("forward", cmd_forward, "evaluate the network on a signal")
    p.add_argument("signal", help="input signal (.bin sidecar or JSON array)")
    p.add_argument("--out-dir", help="directory for per-feature binary outputs")

    p = add("local", cmd_local, "local Lipschitz constants at sample inputs")
    p.add_argument("--samples", help="directory of input signals (default: random Gaussian inputs)")
    p.add_argument("--n", type=int, default=20, help="number of random inputs without --samples")
    p.add_argument("--tol", type=float, help="power iteration tolerance")
    p.add_argument("--histogram", help="CSV of per-sample sigma_max")

    p = add("adversarial", cmd_adversarial, "fooling magnitudes along principal and random directions")
    p.add_argument("--classifier", required=True, help="linear head: JSON {weights, bias} or .bin weights")
    p.add_argument("--input", help="input signal (default: seeded Gaussian)")
    p.add_argument("--h-max", type=float, help="largest magnitude searched")
    p.add_argument("--directions", type=int, default=200)
    p.add_argument("--csv", help="CSV of fooling magnitudes")

    p = add("stationary", cmd_stationary, "Monte-Carlo checks with stationary Gaussian inputs")
    p.add_argument("--spectrum", help="input spectrum over the DFT bins (default: white)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--csv", help="CSV of the concentration table")

    p = add("discriminant", cmd_discriminant, "discriminants of two signal classes", spec=False)
    p.add_argument("spec", nargs="?", help="network spec (JSON); omit with --nets")
    p.add_argument("--class1", required=True)
    p.add_argument("--class2", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--n-test", type=int)
    p.add_argument("--nets", help="directory of specs for the error-vs-discriminant table")
    p.add_argument("--csv", help="CSV of (S, S~, error) rows")

    p = add("toy-example", cmd_toy, "built-in four-layer closed-form example", spec=False)
    p.add_argument("--grid", type=int, help="dense grid size")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = RunConfig(
        subcommand=args.command,
        spec=getattr(args, "spec", None),
        seed=args.seed,
        tolerance=getattr(args, "tol", None),
        samples=getattr(args, "n", None),
        outputs={k: v for k, v in vars(args).items() if k in ("out", "csv", "histogram", "out_dir") and v},
        threads=_threads(),
        options={k: v for k, v in vars(args).items()
                 if k not in ("func", "command", "spec", "seed", "out") and not callable(v)},
    )
    try:
        body = args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as structured JSON
        err = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "invariant"):
            err["invariant"] = exc.invariant
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    _emit(cfg, body, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
