"""Command-line interface.

Subcommands: ingest, poison, inject, retrieve, eval, sweep, defend,
report. ``eval`` and ``sweep`` read a single JSON config; any config field
can be overridden on the command line by its dotted name, e.g.::

    ragpoison eval --config run.json --attack.poisons_per_case 3 --k 10

Seeds are mandatory in eval/sweep configs so runs stay reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import attack as attack_mod
from .attack import (
    AttackConfig,
    AttackKind,
    CompositionOrder,
    FlipPositions,
    WhiteboxConfig,
    load_cases,
    poisons_from_jsonl,
    poisons_to_jsonl,
)
from .corpus import dedup_filter, ingest_corpus, inject_poisons, load_snapshot, save_snapshot
from .defense import perplexity_split, roc_auc, train_lm
from .embedding import Encoder, EncoderKind, feature_hash_encoder, linear_table_encoder, load_precomputed
from .errors import ConfigError, RagPoisonError
from .evaluation import DefenseStack, report_from_json, run_experiment, run_sweep
from .generation import GeneratorConfig
from .reporting import write_report, write_roc, write_sweep
from .retrieval import SimilarityMetric, retrieve_top_k

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": None,
    "corpus": None,
    "snapshot": None,
    "cases": None,
    "k": 5,
    "metric": "dot_product",
    "repeats": 1,
    "output_dir": "out",
    "figures": True,
    "encoder": {"kind": "feature_hash", "dim": 256, "seed": 0, "path": None},
    "generator": {
        "kind": "mock_reader",
        "temperature": 0.1,
        "endpoint": "",
        "model": "",
        "auth_header": "",
        "timeout_ms": 30000,
        "max_retries": 3,
    },
    "attack": {
        "kind": "blackbox",
        "poisons_per_case": 5,
        "max_trials": 50,
        "length_budget": 30,
        "order": "retrieval_first",
        "variant_base": "blackbox",
        "whitebox": {
            "max_flip_iters": None,
            "candidate_pool_size": 64,
            "positions": "retrieval_only",
        },
    },
    "defenses": {
        "paraphrase": False,
        "dedup": False,
        "ppl_threshold": None,
        "ppl_order": 3,
        "ppl_alpha": 0.1,
        "expanded_k": None,
    },
    "sweep": {"k_values": [5], "n_values": [5]},
}


def _deep_merge(base: dict[str, Any], overlay: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: dict[str, Any], extra_args: Sequence[str]) -> dict[str, Any]:
    """Apply ``--dotted.name value`` pairs onto a config dict."""
    if len(extra_args) % 2 != 0:
        raise ConfigError(f"dangling override near {extra_args[-1]!r}; expected '--name value' pairs")
    config = json.loads(json.dumps(config))  # deep copy
    for flag, raw in zip(extra_args[::2], extra_args[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected an override flag, got {flag!r}")
        path = flag[2:].split(".")
        node = config
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = _parse_override_value(raw)
    return config


def load_config(path: str | None, extra_args: Sequence[str]) -> dict[str, Any]:
    config = DEFAULT_CONFIG
    if path:
        file_cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        config = _deep_merge(config, file_cfg)
    return apply_overrides(config, extra_args)


def build_encoder(cfg: dict[str, Any]) -> Encoder:
    kind = EncoderKind(cfg.get("kind", "feature_hash"))
    if kind is EncoderKind.FEATURE_HASH:
        return feature_hash_encoder(int(cfg.get("dim", 256)), int(cfg.get("seed", 0)))
    if kind is EncoderKind.LINEAR_TABLE:
        return linear_table_encoder(int(cfg.get("dim", 256)), int(cfg.get("seed", 0)))
    path = cfg.get("path")
    if not path:
        raise ConfigError("precomputed encoder needs encoder.path")
    return load_precomputed(path)


def build_generator(cfg: dict[str, Any]) -> GeneratorConfig:
    kwargs = {k: v for k, v in cfg.items() if v is not None}
    return GeneratorConfig(**kwargs)


def build_attack(cfg: dict[str, Any]) -> AttackConfig:
    wb = cfg.get("whitebox", {})
    return AttackConfig(
        kind=AttackKind(cfg.get("kind", "blackbox")),
        poisons_per_case=int(cfg.get("poisons_per_case", 5)),
        max_trials=int(cfg.get("max_trials", 50)),
        length_budget=int(cfg.get("length_budget", 30)),
        order=CompositionOrder(cfg.get("order", "retrieval_first")),
        variant_base=AttackKind(cfg.get("variant_base", "blackbox")),
        whitebox=WhiteboxConfig(
            max_flip_iters=wb.get("max_flip_iters"),
            candidate_pool_size=int(wb.get("candidate_pool_size", 64)),
            positions=FlipPositions(wb.get("positions", "retrieval_only")),
        ),
    )


def build_defenses(cfg: dict[str, Any]) -> DefenseStack:
    return DefenseStack(
        paraphrase=bool(cfg.get("paraphrase", False)),
        dedup=bool(cfg.get("dedup", False)),
        ppl_threshold=cfg.get("ppl_threshold"),
        ppl_order=int(cfg.get("ppl_order", 3)),
        ppl_alpha=float(cfg.get("ppl_alpha", 0.1)),
        expanded_k=cfg.get("expanded_k"),
    )


def _load_db(config: dict[str, Any]):
    if config.get("snapshot"):
        return load_snapshot(config["snapshot"])
    if config.get("corpus"):
        return ingest_corpus(config["corpus"])
    raise ConfigError("config needs either 'corpus' (JSONL file) or 'snapshot' (directory)")


def _require_seed(config: dict[str, Any]) -> int:
    seed = config.get("seed")
    if seed is None:
        raise ConfigError("config field 'seed' is mandatory for eval and sweep")
    return int(seed)


def cmd_ingest(args, extra) -> int:
    db = ingest_corpus(args.corpus)
    save_snapshot(db, args.out)
    print(f"ingested {len(db)} records -> {args.out} (snapshot {db.snapshot_id[:12]})")
    return 0


def cmd_poison(args, extra) -> int:
    import dataclasses

    config = load_config(args.config, extra)
    cases = load_cases(config["cases"] if args.cases is None else args.cases)
    seed = int(config.get("seed") or 0)
    attack_cfg = dataclasses.replace(build_attack(config["attack"]), seed=seed)
    generator = build_generator(config["generator"])
    encoder = build_encoder(config["encoder"])
    metric = SimilarityMetric(config["metric"])
    poisons = []
    for case in sorted(cases, key=lambda c: c.case_id):
        poisons.extend(attack_mod.craft_for_case(case, attack_cfg, generator, encoder, metric))
    poisons_to_jsonl(poisons, args.out)
    print(f"crafted {len(poisons)} poisons ({attack_cfg.kind.value}) -> {args.out}")
    return 0


def cmd_inject(args, extra) -> int:
    db = load_snapshot(args.snapshot)
    poisons = poisons_from_jsonl(args.poisons)
    poisoned = inject_poisons(db, poisons)
    save_snapshot(poisoned, args.out)
    print(f"injected {len(poisons)} poisons: {len(db)} -> {len(poisoned)} records at {args.out}")
    return 0


def cmd_retrieve(args, extra) -> int:
    config = load_config(args.config, extra)
    db = load_snapshot(args.snapshot) if args.snapshot else _load_db(config)
    encoder = build_encoder(config["encoder"])
    metric = SimilarityMetric(config["metric"])
    result = retrieve_top_k(db, encoder, metric, args.query, args.k)
    for rank, entry in enumerate(result.entries, start=1):
        rec = db.get(entry.record_id)
        origin = "!" if rec.origin == "poison" else " "
        print(f"{rank:3d} {entry.score:12.6f} {origin} {entry.record_id}  {rec.text[:70]}")
    return 0


def cmd_eval(args, extra) -> int:
    config = load_config(args.config, extra)
    seed = _require_seed(config)
    db = _load_db(config)
    cases = load_cases(config["cases"])
    report = run_experiment(
        db,
        cases,
        build_attack(config["attack"]),
        build_encoder(config["encoder"]),
        SimilarityMetric(config["metric"]),
        build_generator(config["generator"]),
        defenses=build_defenses(config["defenses"]),
        k=int(config["k"]),
        repeats=int(config.get("repeats", 1)),
        seed=seed,
    )
    out_dir = Path(config["output_dir"])
    written = write_report(report, out_dir, figures=bool(config.get("figures", True)))
    print(
        f"asr={report.asr:.3f} precision={report.precision:.3f} recall={report.recall:.3f} "
        f"f1={report.f1:.3f} correct={report.correct_rate:.3f}"
    )
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_sweep(args, extra) -> int:
    config = load_config(args.config, extra)
    seed = _require_seed(config)
    db = _load_db(config)
    cases = load_cases(config["cases"])
    rows = run_sweep(
        db,
        cases,
        build_attack(config["attack"]),
        build_encoder(config["encoder"]),
        SimilarityMetric(config["metric"]),
        build_generator(config["generator"]),
        defenses=build_defenses(config["defenses"]),
        k_values=[int(k) for k in config["sweep"]["k_values"]],
        n_values=[int(n) for n in config["sweep"]["n_values"]],
        seed=seed,
    )
    out_dir = Path(config["output_dir"])
    written = write_sweep(rows, out_dir, figures=bool(config.get("figures", True)))
    for row in rows:
        print(
            f"k={row['k']:3d} n={row['n']:3d} asr={row['asr']:.3f} "
            f"precision={row['precision']:.3f} recall={row['recall']:.3f} f1={row['f1']:.3f}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_defend(args, extra) -> int:
    config = load_config(args.config, extra)
    db = load_snapshot(args.snapshot)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.dedup:
        filtered, removed = dedup_filter(db)
        save_snapshot(filtered, out_dir / "deduped")
        (out_dir / "removed.json").write_text(json.dumps(removed, indent=2) + "\n", encoding="utf-8")
        print(f"dedup: removed {len(removed)} records -> {out_dir / 'deduped'}")
    if args.ppl:
        defenses = build_defenses(config["defenses"])
        lm = train_lm(db, order=defenses.ppl_order, alpha=defenses.ppl_alpha)
        clean_scores, poison_scores = perplexity_split(lm, db)
        if not poison_scores:
            print("no poison-origin records in snapshot; skipping ROC")
        else:
            curve = roc_auc(clean_scores, poison_scores)
            written = write_roc(curve, clean_scores, poison_scores, out_dir,
                                figures=bool(config.get("figures", True)))
            print(f"perplexity AUC = {curve.auc:.4f}")
            for path in written:
                print(f"wrote {path}")
    if not args.dedup and not args.ppl:
        print("nothing to do: pass --dedup and/or --ppl")
        return 1
    return 0


def cmd_report(args, extra) -> int:
    report = report_from_json(Path(args.report).read_text(encoding="utf-8"))
    written = write_report(report, args.out, figures=not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragpoison", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a JSONL corpus into a snapshot directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("poison", help="craft poisons for target cases, write JSONL")
    p.add_argument("--config", default=None)
    p.add_argument("--cases", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("inject", help="add poisons from JSONL to a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--poisons", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("retrieve", help="ad-hoc top-k query against a snapshot")
    p.add_argument("--config", default=None)
    p.add_argument("--snapshot", default=None)
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="full attack/defense evaluation run")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of runs over k and poison-count values")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defend", help="apply database-side defenses to a snapshot")
    p.add_argument("--config", default=None)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--ppl", action="store_true")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report", help="re-render CSV tables and figures from a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except RagPoisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
