"""Command-line front end: synth, bank, train, eval, gradcheck, report.

Flags mirror config field names in kebab-case. A JSON config file may
supply any field; explicit flags override it. Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pmce.enhancer import EnhancerConfig, load_params, save_params
from pmce.episodic_eval import CLASSIFIERS, RETRIEVAL_CUES, EvalConfig, evaluate
from pmce.feature_store import read_store, write_store
from pmce.gradcheck import REL_TOL, check_objective_gradients
from pmce.knowledge_bank import build_bank, load_bank, save_bank
from pmce.objectives import LossWeights
from pmce.prior_retrieval import PriorConfig, default_alpha
from pmce.synthetic import SynthConfig, generate
from pmce.trainer import TrainConfig, default_enhancer_config, train


class UsageError(Exception):
    pass


# every key a config file may supply (union over all subcommands)
_CONFIG_KEYS = {
    "store", "bank", "checkpoint", "out", "log", "csv", "split", "report",
    "n_base", "n_novel", "per_class", "d_v", "d_t", "d_s",
    "sigma_vis", "sigma_name", "sigma_cap", "seed",
    "epochs", "batch_size", "lr", "adam_beta1", "adam_beta2", "adam_eps",
    "lambda_rec", "lambda_con", "tau_c", "h", "d_k", "ln_eps", "init_gain",
    "n_way", "k_shot", "m_query", "episodes", "classifier",
    "k", "tau", "alpha", "use_map", "enhance_support", "enhance_query",
    "retrieval_cue", "lr_l2", "lr_on_supports", "jobs",
    "seeds", "t_tokens", "inject_bug",
}


def _load_file_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _get(args: argparse.Namespace, file_cfg: dict, name: str, default=None):
    """Precedence: explicit flag, then config file, then default."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    if name in file_cfg:
        return file_cfg[name]
    return default


def _require(args, file_cfg: dict, name: str):
    val = _get(args, file_cfg, name)
    if val is None:
        raise UsageError(f"missing --{name.replace('_', '-')}")
    return val


def _build(cls, args, file_cfg: dict, fields: list[str], **fixed):
    kwargs = dict(fixed)
    for name in fields:
        val = _get(args, file_cfg, name)
        if val is not None:
            kwargs[name] = val
    return cls(**kwargs)


def _split_by_name(store_path: str, split_name: str):
    _, splits = read_store(store_path)
    for split in splits:
        if split.split_name == split_name:
            return split
    have = [s.split_name for s in splits]
    raise ValueError(f"store has splits {have}, no {split_name!r}")


def cmd_synth(args, file_cfg: dict) -> int:
    out = _require(args, file_cfg, "out")
    scfg = _build(
        SynthConfig, args, file_cfg,
        ["n_base", "n_novel", "per_class", "d_v", "d_t", "d_s",
         "sigma_vis", "sigma_name", "sigma_cap", "seed"],
    )
    base, novel = generate(scfg)
    write_store([base, novel], out)
    print(f"wrote store to {out}: base {base.num_records} records "
          f"({base.num_classes} classes), novel {novel.num_records} records "
          f"({novel.num_classes} classes)")
    return 0


def cmd_bank(args, file_cfg: dict) -> int:
    store = _require(args, file_cfg, "store")
    out = _require(args, file_cfg, "out")
    base = _split_by_name(store, "base")
    bank = build_bank(base)
    save_bank(bank, out)
    print(f"wrote bank to {out}: {bank.num_classes} classes, d_v={bank.d_v}")
    return 0


def cmd_train(args, file_cfg: dict) -> int:
    store = _require(args, file_cfg, "store")
    bank_path = _require(args, file_cfg, "bank")
    out = _require(args, file_cfg, "out")
    base = _split_by_name(store, "base")
    bank = load_bank(bank_path)

    weights = _build(LossWeights, args, file_cfg, ["lambda_rec", "lambda_con", "tau_c"])
    cfg = _build(
        TrainConfig, args, file_cfg,
        ["epochs", "batch_size", "lr", "adam_beta1", "adam_beta2", "adam_eps", "seed"],
        weights=weights,
    )
    enh_kwargs = {}
    for name in ("h", "d_k", "ln_eps", "init_gain"):
        val = _get(args, file_cfg, name)
        if val is not None:
            enh_kwargs[name] = val
    if "h" not in enh_kwargs:
        enh_kwargs["h"] = default_enhancer_config(base.d_v, base.d_t).h
    enh_cfg = EnhancerConfig(d_v=base.d_v, d_t=base.d_t, **enh_kwargs)

    params, clf, log = train(base, bank, cfg, enh_cfg)
    save_params(params, enh_cfg, out, seed=cfg.seed,
                extra={"W_c": clf.W_c, "b_c": clf.b_c})
    log_path = _get(args, file_cfg, "log", f"{out}.log.jsonl")
    log.save(log_path)
    last = log.entries[-1]
    print(f"trained {cfg.epochs} epochs: total {last['total']:.4f} "
          f"(cls {last['cls']:.4f}, rec {last['rec']:.4f}, con {last['con']:.4f})")
    print(f"wrote checkpoint to {out}, log to {log_path}")
    return 0


def cmd_eval(args, file_cfg: dict) -> int:
    store = _require(args, file_cfg, "store")
    bank_path = _require(args, file_cfg, "bank")
    ckpt = _require(args, file_cfg, "checkpoint")
    split_name = _get(args, file_cfg, "split", "novel")
    novel = _split_by_name(store, split_name)
    bank = load_bank(bank_path)
    params, enh_cfg, _, _ = load_params(ckpt)

    k_shot = _get(args, file_cfg, "k_shot", 1)
    alpha = _get(args, file_cfg, "alpha", default_alpha(k_shot))
    prior = _build(PriorConfig, args, file_cfg, ["k", "tau"], alpha=alpha)
    cfg = _build(
        EvalConfig, args, file_cfg,
        ["n_way", "m_query", "episodes", "seed", "classifier",
         "use_map", "enhance_support", "enhance_query",
         "retrieval_cue", "lr_l2", "lr_on_supports"],
        k_shot=k_shot, prior=prior,
    )
    jobs = _get(args, file_cfg, "jobs", 1)
    report = evaluate(novel, bank, params, enh_cfg, cfg, jobs=jobs)
    print(f"{cfg.n_way}-way {cfg.k_shot}-shot ({cfg.classifier}, "
          f"{cfg.episodes} episodes): "
          f"{100 * report.mean:.2f} +/- {100 * report.ci95_half_width:.2f}")
    out = _get(args, file_cfg, "out")
    if out is not None:
        report.save(out)
        print(f"wrote report to {out}")
    csv = _get(args, file_cfg, "csv")
    if csv is not None:
        Path(csv).write_text(report.accuracies_csv(), encoding="utf-8")
        print(f"wrote per-episode accuracies to {csv}")
    return 0


def cmd_gradcheck(args, file_cfg: dict) -> int:
    seeds = _get(args, file_cfg, "seeds", 5)
    inject = bool(_get(args, file_cfg, "inject_bug", False))
    worst: dict[str, float] = {}
    for seed in range(seeds):
        for t_tokens in (1, 3):
            errs = check_objective_gradients(
                seed=seed, t_tokens=t_tokens, inject_bug=inject
            )
            for name, err in errs.items():
                worst[name] = max(worst.get(name, 0.0), err)
    print(f"{'tensor':<10} {'max rel err':>12}  status")
    ok = True
    for name, err in worst.items():
        good = err < REL_TOL
        ok &= good
        print(f"{name:<10} {err:>12.3e}  {'pass' if good else 'FAIL'}")
    print(f"gradcheck {'passed' if ok else 'FAILED'} "
          f"({seeds} seeds, T in {{1, 3}}, tol {REL_TOL:g})")
    return 0 if ok else 1


def cmd_report(args, file_cfg: dict) -> int:
    path = _require(args, file_cfg, "report")
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = payload.get("config", {})
    mean = payload["mean"]
    half = payload["ci95_half_width"]
    episodes = len(payload["accuracies"])
    print(f"{cfg.get('n_way', '?')}-way {cfg.get('k_shot', '?')}-shot, "
          f"classifier {cfg.get('classifier', '?')}, {episodes} episodes")
    flags = ", ".join(
        f"{name}={cfg[name]}"
        for name in ("use_map", "enhance_support", "enhance_query")
        if name in cfg
    )
    if flags:
        print(f"flags: {flags}")
    print(f"accuracy: {100 * mean:.2f} +/- {100 * half:.2f}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file supplying any config fields")


def _int(p, name, **kw):
    p.add_argument(name, type=int, **kw)


def _float(p, name, **kw):
    p.add_argument(name, type=float, **kw)


def _bool(p, name, **kw):
    p.add_argument(name, action=argparse.BooleanOptionalAction, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmce")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature store")
    _add_common(p)
    p.add_argument("--out")
    for name in ("--n-base", "--n-novel", "--per-class", "--d-v", "--d-t",
                 "--d-s", "--seed"):
        _int(p, name)
    for name in ("--sigma-vis", "--sigma-name", "--sigma-cap"):
        _float(p, name)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bank", help="build the knowledge bank from a store")
    _add_common(p)
    p.add_argument("--store")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bank)

    p = sub.add_parser("train", help="train the enhancer on the base split")
    _add_common(p)
    for name in ("--store", "--bank", "--out", "--log"):
        p.add_argument(name)
    for name in ("--epochs", "--batch-size", "--seed", "--h", "--d-k"):
        _int(p, name)
    for name in ("--lr", "--adam-beta1", "--adam-beta2", "--adam-eps",
                 "--lambda-rec", "--lambda-con", "--tau-c", "--ln-eps",
                 "--init-gain"):
        _float(p, name)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="episodic evaluation on a split")
    _add_common(p)
    for name in ("--store", "--bank", "--checkpoint", "--out", "--csv",
                 "--split"):
        p.add_argument(name)
    for name in ("--n-way", "--k-shot", "--m-query", "--episodes", "--seed",
                 "--k", "--jobs"):
        _int(p, name)
    for name in ("--tau", "--alpha", "--lr-l2"):
        _float(p, name)
    p.add_argument("--classifier", choices=CLASSIFIERS)
    p.add_argument("--retrieval-cue", choices=RETRIEVAL_CUES)
    for name in ("--use-map", "--enhance-support", "--enhance-query",
                 "--lr-on-supports"):
        _bool(p, name)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    _int(p, "--seeds")
    _bool(p, "--inject-bug", help="corrupt one gradient as a negative control")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="print a saved evaluation report")
    _add_common(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_file_config(args.config)
        return args.func(args, file_cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
