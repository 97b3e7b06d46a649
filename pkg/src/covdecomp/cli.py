"""Command-line front end: simulate, fit, summarize, replicate.

All commands read a single YAML (or JSON) config file and write into an
output directory. Every artifact embeds the seed, a hash of the config, and
the package version so a run can be replayed byte for byte. Exit codes:
0 success, 2 usage error, 3 data validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .model_core import (
    GroundTruth,
    Hyperparameters,
    ObservationMatrix,
    SimulationSpec,
    matrix_losses,
    simulate,
    support_metrics,
)
from .posterior import ChainOutput, fdr_select, summarize
from .sampler_gfm import RwConfig, run_gfm_chain
from .sampler_lrsd import ChainConfig, NumericalChainError, run_chain

__all__ = [
    "RunManifest",
    "main",
    "run_replicate_study",
    "fit_model",
    "load_config",
]

VARIANTS = ("lrsd", "gfm-hiw", "gfm-lasso")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class ValidationError(Exception):
    """Bad input data or inconsistent configuration."""


@dataclass
class RunManifest:
    command: str
    config_path: str
    output_dir: str
    seed: int
    threads: int = 1
    variant: str | None = None
    fdr: float = 0.20
    dof_mode: str = "conjugate"
    hastings_exact: bool = False
    binary_traces: bool = False
    config_hash: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def provenance(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "artifact_version": __version__,
        }

    def stamp(self) -> str:
        return (
            f"seed={self.seed} config_hash={self.config_hash} "
            f"artifact_version={__version__}"
        )


def load_config(path) -> dict[str, Any]:
    text = Path(path).read_text()
    config = yaml.safe_load(text)
    if not isinstance(config, dict):
        raise ValidationError(f"config {path} must hold a mapping at top level")
    return config


def config_hash(config: dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _derive_seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(base), *map(int, path)]).generate_state(1)[0])


def _hyper_from_config(config: dict, q: int, variant: str) -> Hyperparameters:
    section = dict(config.get("hyper", {}))
    r = section.pop("r", None)
    hyper = Hyperparameters.defaults(q, r=r, variant=variant)
    for key, value in section.items():
        if not hasattr(hyper, key):
            raise ValidationError(f"unknown hyperparameter {key!r}")
        setattr(hyper, key, float(value))
    return hyper


def _chain_from_config(config: dict, seed: int) -> ChainConfig:
    section = config.get("chain", {})
    return ChainConfig(
        burn_in=int(section.get("burn_in", 2000)),
        samples=int(section.get("samples", 4000)),
        thin=int(section.get("thin", 2)),
        grid_count=int(section.get("grid_count", 100)),
        seed=seed,
    )


def fit_model(
    data: ObservationMatrix,
    hyper: Hyperparameters,
    chain: ChainConfig,
    variant: str,
    *,
    dof_mode: str = "conjugate",
    hastings_exact: bool = False,
    graph_moves_per_iter: int | None = None,
    sigma_xi: float = 0.3,
    progress: bool = False,
) -> ChainOutput:
    """Center the data and run the requested chain variant."""
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    centered = data.centered()
    if variant == "lrsd":
        return run_chain(centered, hyper, chain, progress=progress)
    return run_gfm_chain(
        centered,
        hyper,
        chain,
        variant.removeprefix("gfm-"),
        dof_mode=dof_mode,
        hastings_exact=hastings_exact,
        graph_moves_per_iter=graph_moves_per_iter,
        rw=RwConfig(sigma_xi=sigma_xi),
        progress=progress,
    )


# ----------------------------------------------------------------------
# trace persistence
# ----------------------------------------------------------------------

def _write_traces(out_dir: Path, output: ChainOutput, manifest: RunManifest) -> None:
    traces = out_dir / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    stamp = manifest.stamp()
    if manifest.binary_traces:
        np.savez_compressed(traces / "traces.npz", **output.draws)
    else:
        for name, block in output.draws.items():
            flat = block.reshape(block.shape[0], -1)
            header = f"{stamp}\nblock={name} shape={','.join(map(str, block.shape))}"
            np.savetxt(traces / f"{name}.csv", flat, delimiter=",", header=header)
    np.savetxt(
        out_dir / "inclusion_freq.csv",
        output.inclusion_freq,
        delimiter=",",
        header=stamp,
    )
    np.savetxt(
        out_dir / "rank_histogram.csv",
        output.rank_histogram[None, :],
        fmt="%d",
        delimiter=",",
        header=stamp,
    )
    if "graph" in output.draws:
        with (traces / "graph_edges.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "j", "jp"])
            adjacency = output.draws["graph"]
            for it in range(adjacency.shape[0]):
                js, jps = np.nonzero(np.triu(adjacency[it], k=1))
                for j, jp in zip(js.tolist(), jps.tolist()):
                    writer.writerow([it, j, jp])
    meta = dict(output.meta)
    meta.update(manifest.provenance())
    (out_dir / "chain_meta.json").write_text(json.dumps(meta, default=str, indent=1))


def _read_traces(out_dir: Path) -> ChainOutput:
    traces = out_dir / "traces"
    meta_path = out_dir / "chain_meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing chain metadata in {out_dir}")
    meta = json.loads(meta_path.read_text())
    draws: dict[str, np.ndarray] = {}
    npz = traces / "traces.npz"
    if npz.exists():
        with np.load(npz) as archive:
            draws = {k: archive[k] for k in archive.files}
    else:
        for path in sorted(traces.glob("*.csv")):
            if path.name == "graph_edges.csv":
                continue
            with path.open() as fh:
                fh.readline()
                shape_line = fh.readline().strip().lstrip("# ")
            shape = tuple(int(s) for s in shape_line.split("shape=")[1].split(","))
            flat = np.loadtxt(path, delimiter=",", ndmin=2)
            draws[path.stem] = flat.reshape(shape)
    if "z" not in draws:
        raise ValidationError(f"no trace blocks found under {traces}")
    if "graph" in draws:
        draws["graph"] = draws["graph"].astype(np.uint8)
    draws["z"] = draws["z"].astype(np.int64)
    freq = np.loadtxt(out_dir / "inclusion_freq.csv", delimiter=",", ndmin=2)
    hist = np.loadtxt(out_dir / "rank_histogram.csv", delimiter=",", ndmin=2).ravel()
    return ChainOutput(
        draws=draws,
        inclusion_freq=freq,
        rank_histogram=hist.astype(np.int64),
        meta=meta,
    )


# ----------------------------------------------------------------------
# replicate studies
# ----------------------------------------------------------------------

@dataclass
class ReplicateResult:
    index: int
    ok: bool
    rank: int = -1
    fro_bayes: float = float("nan")
    l1_bayes: float = float("nan")
    fro_sample: float = float("nan")
    l1_sample: float = float("nan")
    fp: int = -1
    fn: int = -1
    error: str = ""


def _study_worker(payload: dict) -> ReplicateResult:
    index = payload["index"]
    try:
        spec = SimulationSpec(
            payload["model"], payload["q"], payload["n"], seed=payload["data_seed"]
        )
        data, truth = simulate(spec)
        hyper = Hyperparameters(**payload["hyper"])
        chain = ChainConfig(**payload["chain"], seed=payload["chain_seed"])
        output = fit_model(
            data,
            hyper,
            chain,
            payload["variant"],
            dof_mode=payload["dof_mode"],
            hastings_exact=payload["hastings_exact"],
        )
        summary = summarize(output, payload["fdr"])
        selected = fdr_select(output.inclusion_freq, payload["fdr"])
        fp, fn = support_metrics(selected, truth.edges)
        l1_b, fro_b = matrix_losses(summary.sigma_mean, truth.Sigma)
        l1_s, fro_s = matrix_losses(data.sample_covariance(), truth.Sigma)
        return ReplicateResult(
            index=index,
            ok=True,
            rank=summary.rank,
            fro_bayes=fro_b,
            l1_bayes=l1_b,
            fro_sample=fro_s,
            l1_sample=l1_s,
            fp=fp,
            fn=fn,
        )
    except Exception as exc:  # per-replicate failures must not kill the study
        return ReplicateResult(index=index, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_replicate_study(
    *,
    model: int,
    q: int,
    n: int,
    replicates: int,
    variant: str,
    hyper: Hyperparameters,
    chain: ChainConfig,
    base_seed: int,
    threads: int = 1,
    fdr: float = 0.20,
    dof_mode: str = "conjugate",
    hastings_exact: bool = False,
) -> list[ReplicateResult]:
    """Run a simulation study; the report is identical for any thread count.

    Each replicate derives its data seed and chain seed from the base seed
    and its index, and results are reduced in index order.
    """
    hyper_payload = {
        "r": hyper.r,
        "a_p": hyper.a_p,
        "b_p": hyper.b_p,
        "a_pi": hyper.a_pi,
        "b_pi": hyper.b_pi,
        "a_tau": hyper.a_tau,
        "b_tau": hyper.b_tau,
        "a_lambda": hyper.a_lambda,
        "b_lambda": hyper.b_lambda,
        "a_rho": hyper.a_rho,
        "b_rho": hyper.b_rho,
        "delta": hyper.delta,
        "xi_max": hyper.xi_max,
    }
    chain_payload = {
        "burn_in": chain.burn_in,
        "samples": chain.samples,
        "thin": chain.thin,
        "grid_count": chain.grid_count,
    }
    payloads = [
        {
            "index": i,
            "model": model,
            "q": q,
            "n": n,
            "variant": variant,
            "hyper": hyper_payload,
            "chain": chain_payload,
            "data_seed": _derive_seed(base_seed, i, 0),
            "chain_seed": _derive_seed(base_seed, i, 1),
            "fdr": fdr,
            "dof_mode": dof_mode,
            "hastings_exact": hastings_exact,
        }
        for i in range(replicates)
    ]
    if threads <= 1 or replicates <= 1:
        results = [_study_worker(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_study_worker, payloads))
    return sorted(results, key=lambda res: res.index)


def study_report(results: list[ReplicateResult], target_rank: int) -> dict[str, Any]:
    """Aggregate replicate metrics in the layout of the simulation tables."""
    done = [r for r in results if r.ok]

    def agg(values):
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return float("nan"), float("nan")
        return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0

    ranks = [r.rank for r in done]
    report = {
        "replicates": len(results),
        "completed": len(done),
        "target_rank": target_rank,
        "rank_recovery_pct": (
            100.0 * sum(r == target_rank for r in ranks) / len(done) if done else float("nan")
        ),
    }
    for name, values in [
        ("rank", ranks),
        ("fro_bayes", [r.fro_bayes for r in done]),
        ("l1_bayes", [r.l1_bayes for r in done]),
        ("fro_sample", [r.fro_sample for r in done]),
        ("l1_sample", [r.l1_sample for r in done]),
        ("fp", [r.fp for r in done]),
        ("fn", [r.fn for r in done]),
    ]:
        mean, sd = agg(values)
        report[f"{name}_mean"] = mean
        report[f"{name}_sd"] = sd
    report["errors"] = [
        {"index": r.index, "error": r.error} for r in results if not r.ok
    ]
    return report


def _write_study_outputs(out_dir: Path, manifest, results, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows_path = out_dir / "replicates.csv"
    with rows_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# " + manifest.stamp()])
        writer.writerow(
            ["index", "ok", "rank", "fro_bayes", "l1_bayes", "fro_sample",
             "l1_sample", "fp", "fn", "error"]
        )
        for r in results:
            writer.writerow(
                [r.index, int(r.ok), r.rank, r.fro_bayes, r.l1_bayes,
                 r.fro_sample, r.l1_sample, r.fp, r.fn, r.error]
            )
    payload = dict(report)
    payload.update(manifest.provenance())
    (out_dir / "report.json").write_text(json.dumps(payload, indent=1))
    lines = [
        f"replicate study ({manifest.stamp()})",
        f"completed {report['completed']}/{report['replicates']} replicates",
        f"rank recovery: {report['rank_recovery_pct']:.1f}% at target rank {report['target_rank']}"
        f" (mean {report['rank_mean']:.2f}, sd {report['rank_sd']:.2f})",
        f"losses (Frobenius): bayes {report['fro_bayes_mean']:.2f} ({report['fro_bayes_sd']:.2f})"
        f" vs sample {report['fro_sample_mean']:.2f} ({report['fro_sample_sd']:.2f})",
        f"losses (L1): bayes {report['l1_bayes_mean']:.2f} ({report['l1_bayes_sd']:.2f})"
        f" vs sample {report['l1_sample_mean']:.2f} ({report['l1_sample_sd']:.2f})",
        f"support: FP {report['fp_mean']:.2f} ({report['fp_sd']:.2f}),"
        f" FN {report['fn_mean']:.2f} ({report['fn_sd']:.2f})",
    ]
    for err in report["errors"]:
        lines.append(f"replicate {err['index']} failed: {err['error']}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def _cmd_simulate(manifest: RunManifest, config: dict) -> int:
    section = config.get("simulation")
    if not section or "model" not in section:
        raise ValidationError("config needs a 'simulation' section with a model id")
    spec = SimulationSpec(
        model_id=int(section["model"]),
        q=int(section.get("q", 30)),
        n=int(section.get("n", 100)),
        seed=manifest.seed,
    )
    data, truth = simulate(spec)
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = manifest.stamp() + f"\nmodel={spec.model_id} q={spec.q} n={spec.n}"
    np.savetxt(out / "data.csv", data.data, delimiter=",", header=header)
    truth.to_json(out / "truth.json")
    (out / "manifest.json").write_text(
        json.dumps({"command": "simulate", **manifest.provenance(),
                    "model": spec.model_id, "q": spec.q, "n": spec.n}, indent=1)
    )
    print(f"wrote {out / 'data.csv'} and {out / 'truth.json'}")
    return EXIT_OK


def _cmd_fit(manifest: RunManifest, config: dict, data_path: str | None) -> int:
    if data_path is None:
        raise ValidationError("fit requires --data pointing at an observation CSV")
    data = ObservationMatrix.from_csv(data_path)
    expected_q = config.get("simulation", {}).get("q")
    if expected_q is not None and int(expected_q) != data.q:
        raise ValidationError(
            f"data has {data.q} variables but config expects q={expected_q}"
        )
    variant = manifest.variant or config.get("fit", {}).get("variant", "lrsd")
    hyper = _hyper_from_config(config, data.q, variant)
    chain = _chain_from_config(config, manifest.seed)
    fit_section = config.get("fit", {})
    output = fit_model(
        data,
        hyper,
        chain,
        variant,
        dof_mode=manifest.dof_mode,
        hastings_exact=manifest.hastings_exact,
        graph_moves_per_iter=fit_section.get("graph_moves_per_iter"),
        sigma_xi=float(fit_section.get("sigma_xi", 0.3)),
        progress=True,
    )
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_traces(out, output, manifest)
    (out / "manifest.json").write_text(
        json.dumps({"command": "fit", "variant": variant, **manifest.provenance()}, indent=1)
    )
    print(f"wrote traces under {out}")
    return EXIT_OK


def _cmd_summarize(manifest: RunManifest, traces_dir: str | None, truth_path: str | None) -> int:
    source = Path(traces_dir or manifest.output_dir)
    output = _read_traces(source)
    summary = summarize(output, manifest.fdr)
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = summary.to_dict()
    payload.update(manifest.provenance())
    if truth_path:
        truth = GroundTruth.from_json(truth_path)
        l1, fro = matrix_losses(summary.sigma_mean, truth.Sigma)
        fp, fn = support_metrics(summary.selected_edges, truth.edges)
        payload["losses"] = {"l1": l1, "frobenius": fro, "fp": fp, "fn": fn}
    (out / "summary.json").write_text(json.dumps(payload, indent=1))
    stamp = manifest.stamp()
    np.savetxt(out / "sigma_mean.csv", summary.sigma_mean, delimiter=",", header=stamp)
    np.savetxt(out / "low_rank_mean.csv", summary.low_rank_mean, delimiter=",", header=stamp)
    np.savetxt(out / "residual_masked.csv", summary.residual_masked, delimiter=",", header=stamp)
    with (out / "selected_edges.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "jp"])
        for j, jp in sorted(summary.selected_edges):
            writer.writerow([j, jp])
    print(f"wrote summary under {out}")
    return EXIT_OK


def _cmd_replicate(manifest: RunManifest, config: dict) -> int:
    section = config.get("study")
    if not section or "model" not in section:
        raise ValidationError("config needs a 'study' section with a model id")
    model = int(section["model"])
    q = int(section.get("q", 30))
    n = int(section.get("n", 100))
    replicates = int(section.get("replicates", 20))
    variant = manifest.variant or section.get("variant", "lrsd")
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    hyper = _hyper_from_config(config, q, variant)
    chain = _chain_from_config(config, 0)
    out = Path(manifest.output_dir)
    if replicates == 0:
        _write_study_outputs(
            out, manifest, [], study_report([], int(section.get("target_rank", 0)))
        )
        print("empty study; wrote empty report")
        return EXIT_OK
    results = run_replicate_study(
        model=model,
        q=q,
        n=n,
        replicates=replicates,
        variant=variant,
        hyper=hyper,
        chain=chain,
        base_seed=manifest.seed,
        threads=manifest.threads,
        fdr=manifest.fdr,
        dof_mode=manifest.dof_mode,
        hastings_exact=manifest.hastings_exact,
    )
    default_target = {1: 3, 2: 1, 3: 3, 4: 1, 5: 2, 6: 1}[model]
    report = study_report(results, int(section.get("target_rank", default_target)))
    _write_study_outputs(out, manifest, results, report)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covdecomp",
        description="Bayesian low-rank plus sparse covariance estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("simulate", "generate synthetic data and ground truth"),
        ("fit", "run an MCMC chain on a data CSV"),
        ("summarize", "summarize a finished chain"),
        ("replicate", "run a replicated simulation study"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="YAML/JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--fdr", type=float, default=0.20)
        p.add_argument("--dof-mode", choices=("conjugate", "literal"), default="conjugate")
        p.add_argument("--hastings-exact", action="store_true")
        p.add_argument("--binary-traces", action="store_true")
        if name == "fit":
            p.add_argument("--data", help="observation CSV (rows = variables)")
        if name == "summarize":
            p.add_argument("--traces", help="directory holding a fit's outputs")
            p.add_argument("--truth", help="ground-truth JSON for loss reporting")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_USAGE
    except (yaml.YAMLError, ValidationError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = RunManifest(
        command=args.command,
        config_path=args.config,
        output_dir=args.out,
        seed=args.seed,
        threads=args.threads,
        variant=args.variant,
        fdr=args.fdr,
        dof_mode=args.dof_mode,
        hastings_exact=args.hastings_exact,
        binary_traces=args.binary_traces,
        config_hash=config_hash(config),
    )
    try:
        if args.command == "simulate":
            return _cmd_simulate(manifest, config)
        if args.command == "fit":
            return _cmd_fit(manifest, config, args.data)
        if args.command == "summarize":
            return _cmd_summarize(manifest, args.traces, args.truth)
        return _cmd_replicate(manifest, config)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalChainError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
