"""Command-line entry points: data preparation through serving."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import corpus, synthetic
from .errors import GendsError
from .evaluation import eval_checkpoints, render_table, run_eval, suite_to_json
from .kb import load_kb, write_kb_jsonl
from .model import VARIANTS, ModelConfig
from .service import (ENV_KB, ENV_MODEL, ENV_PORT, ModelBundle, build_reply,
                      create_app, load_bundle)
from .training import (TrainingConfig, load_checkpoint, save_checkpoint,
                       save_metrics, train)

logger = logging.getLogger(__name__)


@click.group()
@click.option("--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Knowledge-grounded dialogue models on a desk-scale corpus."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@main.command()
@click.option("--out", type=click.Path(file_okay=False), default="data",
              show_default=True, help="Output directory.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-pairs", type=int, default=200, show_default=True)
@click.option("--n-facts", type=int, default=120, show_default=True)
@click.option("--n-entities", type=int, default=140, show_default=True)
@click.option("--split-ratio", type=float, default=0.8, show_default=True)
@click.option("--unseen/--no-unseen", default=True, show_default=True,
              help="Also write an extended KB with held-out entities.")
def prepare(out, seed, n_pairs, n_facts, n_entities, split_ratio, unseen):
    """Generate a synthetic corpus, KB, and train/test split."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        kb, dataset = synthetic.make_synthetic_corpus(
            seed=seed, n_entities=n_entities, n_facts=n_facts, n_pairs=n_pairs)
    except GendsError as exc:
        _fail(exc)
    write_kb_jsonl(out_dir / "kb.jsonl", list(kb.entities.values()),
                   sorted(kb.relations), kb.facts)
    corpus.save_dialogues(out_dir / "dialogues.jsonl", dataset)
    train_set, test_set = corpus.split(dataset, ratio=split_ratio, seed=seed)
    corpus.save_dialogues(out_dir / "train.jsonl", train_set)
    corpus.save_dialogues(out_dir / "test.jsonl", test_set)
    click.echo(f"wrote {len(dataset)} pairs ({len(train_set)} train / "
               f"{len(test_set)} test), {len(kb.entities)} entities, "
               f"{len(kb.facts)} facts to {out_dir}")
    if unseen:
        ext_kb, queries = synthetic.make_unseen_extension(kb, seed=seed + 1)
        write_kb_jsonl(out_dir / "kb_extended.jsonl",
                       list(ext_kb.entities.values()),
                       sorted(ext_kb.relations), ext_kb.facts)
        corpus.save_dialogues(out_dir / "unseen.jsonl", queries)
        click.echo(f"wrote extended KB ({len(ext_kb.entities)} entities) and "
                   f"{len(queries)} held-out-entity queries")


@main.command(name="train")
@click.option("--data", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Training dialogues (JSONL).")
@click.option("--kb", "kb_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Knowledge base (JSONL).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint output path (.npz).")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Training config file (key = value lines).")
@click.option("--variant", type=click.Choice(VARIANTS), default=None,
              help="Override the config's model variant.")
@click.option("--seed", type=int, default=None, help="Override the RNG seed.")
@click.option("--d-emb", type=int, default=64, show_default=True)
@click.option("--d-h", type=int, default=64, show_default=True)
@click.option("--min-count", type=int, default=1, show_default=True,
              help="Vocabulary frequency cutoff.")
@click.option("--metrics", "metrics_path", type=click.Path(dir_okay=False),
              default=None, help="Write per-epoch metrics JSONL here.")
def train_cmd(data, kb_path, out, config_path, variant, seed, d_emb, d_h,
              min_count, metrics_path):
    """Train a model variant and save a checkpoint."""
    try:
        config = (TrainingConfig.from_file(config_path) if config_path
                  else TrainingConfig())
        overrides = {}
        if variant is not None:
            overrides["variant"] = variant
        if seed is not None:
            overrides["seed"] = seed
        if overrides:
            config = dataclasses.replace(config, **overrides)
        kb = load_kb(kb_path)
        dataset = corpus.load_dialogues(data, kb)
        vocab = corpus.build_vocab(dataset, kb, min_count=min_count)
        model_config = ModelConfig(d_emb=d_emb, d_h=d_h, variant=config.variant)

        def progress(stats):
            click.echo(f"epoch {stats.epoch}: task1 {stats.task1_nll:.4f} "
                       f"task2 {stats.task2_nll:.4f} lr {stats.lr:g} "
                       f"|g| {stats.grad_norm:.3f}", err=True)

        result = train(dataset, kb, vocab, config, model_config,
                       callback=progress)
        save_checkpoint(result.params, vocab, out)
        if metrics_path:
            save_metrics(result.history, metrics_path)
        click.echo(f"saved {config.variant} checkpoint to {out}")
    except GendsError as exc:
        _fail(exc)


@main.command(name="eval")
@click.option("--model", "-m", "models", multiple=True, required=True,
              help="Checkpoint, or variant=path; repeatable for a table.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--kb", "kb_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--json", "json_path", type=click.Path(dir_okay=False),
              default=None, help="Also write results as JSON.")
@click.option("--mode", type=click.Choice(["greedy", "beam"]),
              default="greedy", show_default=True)
def eval_cmd(models, data, kb_path, json_path, mode):
    """Evaluate one or more checkpoints on a dialogue set."""
    try:
        kb = load_kb(kb_path)
        dataset = corpus.load_dialogues(data, kb)
        named: dict[str, str] = {}
        for item in models:
            if "=" in item:
                name, path = item.split("=", 1)
            else:
                name, path = Path(item).stem, item
            named[name] = path
        suite = {}
        for name, path in named.items():
            row = eval_checkpoints({name: path}, kb, dataset)[name]
            if row is not None and mode == "beam":
                params, vocab = load_checkpoint(path)
                row = run_eval(params, vocab, kb, dataset, mode="beam")
            suite[name] = row
        click.echo(render_table(suite))
        if json_path:
            Path(json_path).write_text(suite_to_json(suite), encoding="utf-8")
    except GendsError as exc:
        _fail(exc)


def _bundle_from_options(model_path, kb_path) -> ModelBundle:
    model_path = model_path or os.environ.get(ENV_MODEL)
    kb_path = kb_path or os.environ.get(ENV_KB)
    if not model_path or not kb_path:
        raise click.ClickException(
            f"--model and --kb are required (or set {ENV_MODEL} and {ENV_KB})")
    return load_bundle(model_path, kb_path)


def _echo_reply(payload: dict) -> None:
    click.echo(payload["response_text"])
    for ent in payload["entities"]:
        click.echo(f"  [{ent['surface']}] id={ent['entity_id']} "
                   f"pred={ent['predicate']} p={ent['prob']:.3f} "
                   f"gate={ent['gate']:.3f}", err=True)


@main.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              default=None, help=f"Checkpoint path (default ${ENV_MODEL}).")
@click.option("--kb", "kb_path", type=click.Path(dir_okay=False),
              default=None, help=f"KB path (default ${ENV_KB}).")
@click.option("--message", required=True, help="Input message text.")
@click.option("--mode", type=click.Choice(["greedy", "beam"]),
              default="greedy", show_default=True)
@click.option("--beam-width", type=int, default=4, show_default=True)
@click.option("--max-len", type=int, default=30, show_default=True)
def generate(model_path, kb_path, message, mode, beam_width, max_len):
    """Generate a single reply."""
    try:
        bundle = _bundle_from_options(model_path, kb_path)
        payload = build_reply(bundle, message, mode=mode,
                              beam_width=beam_width, max_len=max_len)
    except GendsError as exc:
        _fail(exc)
    _echo_reply(payload)


@main.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              default=None)
@click.option("--kb", "kb_path", type=click.Path(dir_okay=False), default=None)
@click.option("--mode", type=click.Choice(["greedy", "beam"]),
              default="greedy", show_default=True)
def chat(model_path, kb_path, mode):
    """Interactive REPL; blank line or /quit exits."""
    try:
        bundle = _bundle_from_options(model_path, kb_path)
    except GendsError as exc:
        _fail(exc)
    click.echo(f"model {bundle.version}; /quit to exit", err=True)
    while True:
        try:
            line = click.prompt(">", prompt_suffix=" ", default="",
                                show_default=False)
        except (EOFError, click.Abort):
            break
        line = line.strip()
        if not line or line == "/quit":
            break
        try:
            _echo_reply(build_reply(bundle, line, mode=mode))
        except GendsError as exc:
            click.echo(f"error: {exc}", err=True)


@main.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              default=None)
@click.option("--kb", "kb_path", type=click.Path(dir_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None,
              help=f"Port (default ${ENV_PORT} or 8000).")
def serve(model_path, kb_path, host, port):
    """Run the HTTP API server."""
    import uvicorn
    if port is None:
        port = int(os.environ.get(ENV_PORT, "8000"))
    app = create_app(model_path=model_path, kb_path=kb_path)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
