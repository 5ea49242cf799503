"""Command-line interface.

Subcommands: ``train``, ``eval``, ``ablate``, and ``analyze`` (with
``decoder | topk | embeddings | strip | normalize | ablate`` actions).
Exit codes: 0 on success, 2 on configuration errors, 3 when training aborts
on a non-finite loss, 1 on other failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        import torch

        torch.set_num_threads(args.threads)
    from .config import ConfigError
    from .trainer import TrainingDiverged

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.dump_path:
            print(f"offending batch dumped to {exc.dump_path}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reverie", description=__doc__)
    parser.add_argument("--threads", type=int, default=0, help="torch CPU threads (0 = library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a run from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--temperature", type=float, default=0.5)
    p_eval.add_argument("--random-prob", type=float, default=0.01)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--json", action="store_true", help="emit a JSON record")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="run the ablation suite")
    add_ablate_args(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_an = sub.add_parser("analyze", help="inspection tooling")
    an_sub = p_an.add_subparsers(dest="action", required=True)

    a_dec = an_sub.add_parser("decoder", help="train an isolated pixel decoder from a checkpoint")
    a_dec.add_argument("--ckpt", required=True, help="checkpoint containing a replay buffer")
    a_dec.add_argument("--steps", type=int, default=2000)
    a_dec.add_argument("--batch-size", type=int, default=64)
    a_dec.add_argument("--out", required=True, help="output directory")
    a_dec.add_argument("--seed", type=int, default=0)
    a_dec.set_defaults(func=cmd_analyze_decoder)

    a_topk = an_sub.add_parser("topk", help="top-k reconstruction retrieval accuracy")
    a_topk.add_argument("--ckpt", required=True)
    a_topk.add_argument("--decoder", required=True)
    a_topk.add_argument("--k", default="1,5,10")
    a_topk.add_argument("--probes", type=int, default=512)
    a_topk.add_argument("--seed", type=int, default=0)
    a_topk.add_argument("--out", default=None, help="optional JSON output path")
    a_topk.set_defaults(func=cmd_analyze_topk)

    a_emb = an_sub.add_parser("embeddings", help="export per-step representations of an episode")
    a_emb.add_argument("--ckpt", required=True)
    a_emb.add_argument("--episode-seed", type=int, default=0)
    a_emb.add_argument("--out", required=True, help="CSV path")
    a_emb.set_defaults(func=cmd_analyze_embeddings)

    a_strip = an_sub.add_parser("strip", help="decoded open-loop imagination strip")
    a_strip.add_argument("--ckpt", required=True)
    a_strip.add_argument("--decoder", required=True)
    a_strip.add_argument("--steps", type=int, default=30)
    a_strip.add_argument("--episode-seed", type=int, default=0)
    a_strip.add_argument("--start", type=int, default=0)
    a_strip.add_argument("--out", required=True, help="PNG path")
    a_strip.set_defaults(func=cmd_analyze_strip)

    a_norm = an_sub.add_parser("normalize", help="human-normalized score arithmetic")
    a_norm.add_argument("--score", type=float, required=True)
    a_norm.add_argument("--random", type=float, required=True, dest="random_score")
    a_norm.add_argument("--human", type=float, required=True, dest="human_score")
    a_norm.set_defaults(func=cmd_analyze_normalize)

    a_abl = an_sub.add_parser("ablate", help="alias of the top-level ablate command")
    add_ablate_args(a_abl)
    a_abl.set_defaults(func=cmd_ablate)
    return parser


def add_ablate_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--suite", required=True, help="catch | delayed-catch | full")
    p.add_argument("--config", required=True, help="base config file")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--out", required=True, help="suite output directory")
    p.add_argument("--jobs", type=int, default=1)


def cmd_train(args) -> int:
    from .config import Config
    from .trainer import Trainer

    cfg = Config.load(args.config)
    if args.seed is not None:
        cfg = cfg.derive(seed=args.seed)
    art = Trainer(cfg, out_dir=args.out).train()
    print(json.dumps({
        "steps": art.steps,
        "eval_mean": art.final_eval.mean,
        "eval_std": art.final_eval.std,
        "early_stopped": art.early_stopped,
        "out_dir": art.out_dir,
    }))
    return 0


def cmd_eval(args) -> int:
    import torch

    from .trainer import evaluate_policy, load_models

    config, wm, ac = load_models(args.ckpt)
    stats = evaluate_policy(
        wm, ac,
        env_id=config.env_id,
        episodes=args.episodes,
        temperature=args.temperature,
        random_action_prob=args.random_prob,
        frame_stack=config.frame_stack,
        action_stack=config.action_stack,
        max_episode_steps=config.max_episode_steps,
        env_seed_rng=np.random.default_rng(args.seed),
        rng=torch.Generator().manual_seed(args.seed),
    )
    if args.json:
        print(json.dumps({"mean": stats.mean, "std": stats.std, "episode_returns": stats.episode_returns}))
    else:
        print(f"mean return {stats.mean:.3f} +/- {stats.std:.3f} over {len(stats.episode_returns)} episodes")
    return 0


def cmd_ablate(args) -> int:
    from .analysis import run_ablation_suite
    from .config import Config

    base = Config.load(args.config)
    seeds = [int(tok) for tok in args.seeds.split(",") if tok.strip()]
    report = run_ablation_suite(base, args.suite, seeds, args.out, jobs=args.jobs)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_analyze_decoder(args) -> int:
    import torch

    from .analysis import train_decoder
    from .trainer import load_buffer_from_checkpoint, load_models

    config, wm, _ = load_models(args.ckpt)
    buffer = load_buffer_from_checkpoint(args.ckpt)
    if buffer is None:
        raise ValueError("checkpoint has no replay buffer; re-save with checkpoint_buffer: true")
    decoder, history = train_decoder(
        wm, buffer, np.random.default_rng(args.seed), steps=args.steps, batch_size=args.batch_size
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save({
        "decoder": decoder.state_dict(),
        "config": config.to_dict(),
        "history": history,
    }, out / "decoder.pt")
    with open(out / "decoder_loss.csv", "w", encoding="utf-8") as f:
        f.write("step,train_mse,holdout_mse\n")
        for s, tr, ho in zip(history["step"], history["train_mse"], history["holdout_mse"]):
            f.write(f"{s},{tr:.6g},{ho:.6g}\n")
    print(json.dumps({"decoder": str(out / "decoder.pt"), "final_holdout_mse": history["holdout_mse"][-1]}))
    return 0


def load_decoder(path: str):
    import torch

    from .analysis import Decoder
    from .config import Config

    state = torch.load(path, map_location="cpu", weights_only=False)
    config = Config.from_dict(state["config"])
    decoder = Decoder(
        frame_stack=config.frame_stack,
        repr_dim=config.representation_dim,
        channels=config.encoder_channels_tuple(),
    )
    decoder.load_state_dict(state["decoder"])
    decoder.eval()
    return decoder


def cmd_analyze_topk(args) -> int:
    from .analysis import topk_accuracy
    from .trainer import load_buffer_from_checkpoint, load_models

    _, wm, _ = load_models(args.ckpt)
    buffer = load_buffer_from_checkpoint(args.ckpt)
    if buffer is None:
        raise ValueError("checkpoint has no replay buffer")
    decoder = load_decoder(args.decoder)
    ks = [int(tok) for tok in args.k.split(",") if tok.strip()]
    accs = topk_accuracy(decoder, wm, buffer, ks=ks, probe_batch=args.probes,
                         rng=np.random.default_rng(args.seed))
    payload = {f"top{k}": v for k, v in accs.items()}
    print(json.dumps(payload))
    if args.out:
        Path(args.out).write_text(json.dumps(payload))
    return 0


def cmd_analyze_embeddings(args) -> int:
    from .analysis import collect_episode, export_embeddings
    from .trainer import load_models

    config, wm, ac = load_models(args.ckpt)
    trace = collect_episode(wm, ac, config, env_seed=args.episode_seed)
    stats = export_embeddings(wm, trace, args.out)
    print(json.dumps(stats))
    return 0


def cmd_analyze_strip(args) -> int:
    from .analysis import collect_episode, imagined_strip
    from .trainer import load_models

    config, wm, ac = load_models(args.ckpt)
    decoder = load_decoder(args.decoder)
    trace = collect_episode(wm, ac, config, env_seed=args.episode_seed)
    imagined_strip(wm, decoder, trace, args.out, start=args.start, steps=args.steps)
    print(json.dumps({"strip": args.out, "steps": args.steps}))
    return 0


def cmd_analyze_normalize(args) -> int:
    from .analysis import human_normalized

    print(f"{human_normalized(args.score, args.random_score, args.human_score):.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
