"""Command-line interface: training, evaluation, simulation, serving."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .evaluation import ReplayCase, evaluate_checkpoint, simulated_compare
from .training import (
    Checkpoint,
    TrainConfig,
    load_corpus,
    load_features,
    train_backward,
    train_forward_abd,
    train_show_and_tell,
)


def _load_config(path: str | None, seed: int | None) -> TrainConfig:
    doc = {}
    if path:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    if seed is not None:
        doc["seed"] = seed
    return TrainConfig.from_doc(doc)


def _train_options(fn):
    fn = click.option("--corpus", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--features", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--config", type=click.Path(exists=True), help="JSON TrainConfig overrides")(fn)
    fn = click.option("--out", required=True, type=click.Path())(fn)
    fn = click.option("--seed", type=int, default=None, help="overrides the config seed")(fn)
    return fn


@click.group()
def main():
    """Interactive caption completion: train, evaluate, simulate, serve."""


def _run_training(trainer, corpus, features, config, out, seed, **extra):
    records = load_corpus(corpus)
    store = load_features(features)
    cfg = _load_config(config, seed)
    checkpoint = trainer(records, store, cfg, **extra)
    checkpoint.save(out)
    last = checkpoint.history["train_loss"][-1]
    click.echo(
        f"saved {checkpoint.kind} checkpoint to {out} "
        f"(best epoch {checkpoint.epoch}, final train loss {last:.4f})"
    )


@main.command("train-backward")
@_train_options
def train_backward_cmd(corpus, features, config, out, seed):
    """Train the right-to-left decoder on reversed captions."""
    _run_training(train_backward, corpus, features, config, out, seed)


@main.command("train-st")
@_train_options
def train_st_cmd(corpus, features, config, out, seed):
    """Train the prefix-only forward decoder (the baseline completer)."""
    _run_training(train_show_and_tell, corpus, features, config, out, seed)


@main.command("train-forward")
@_train_options
@click.option("--backward", "backward_path", required=True, type=click.Path(exists=True),
              help="frozen backward-decoder checkpoint")
def train_forward_cmd(corpus, features, config, out, seed, backward_path):
    """Train the attention-bridged forward decoder over a frozen backward one."""
    frozen = Checkpoint.load(backward_path)
    _run_training(
        train_forward_abd, corpus, features, config, out, seed, frozen_backward=frozen
    )


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", type=click.Choice(["train", "val", "test", "all"]))
def evaluate_cmd(checkpoint_path, corpus, features, split):
    """Greedy-decode a split and report caption metrics as JSON."""
    checkpoint = Checkpoint.load(checkpoint_path)
    report = evaluate_checkpoint(checkpoint, load_corpus(corpus), load_features(features), split)
    click.echo(json.dumps(report.to_doc(), indent=2))


def _load_cases(path: str) -> list[ReplayCase]:
    cases = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            cases.append(
                ReplayCase(
                    image_id=str(doc["image_id"]),
                    text=doc["text"],
                    cursor=int(doc["cursor"]),
                    final=doc["final"],
                )
            )
    return cases


@main.command("simulate")
@click.option("--cases", required=True, type=click.Path(exists=True),
              help="JSON-lines of {image_id, text, cursor, final}")
@click.option("--model-a", required=True, type=click.Path(exists=True))
@click.option("--model-b", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, type=int)
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "csv"]))
def simulate_cmd(cases, model_a, model_b, features, k, fmt):
    """Replay logged completion moments through two models and compare
    per-rank edit distance to the final annotations."""
    report = simulated_compare(
        _load_cases(cases),
        Checkpoint.load(model_a).to_model(),
        Checkpoint.load(model_b).to_model(),
        k,
        load_features(features),
    )
    report.pop("per_case_rank1")
    if fmt == "json":
        click.echo(json.dumps(report, indent=2))
    else:
        writer = [["model"] + [f"rank{i}" for i in range(1, k + 1)]]
        for label in ("model_a", "model_b"):
            means = report[label]["mean_levd"]
            writer.append([label] + [f"{x:.4f}" if x is not None else "" for x in means])
        click.echo("\n".join(",".join(row) for row in writer))


@main.command("serve")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, type=int)
@click.option("--log", "log_path", type=click.Path(), default="events.jsonl",
              help="append-only event log")
@click.option("--images", "images_dir", type=click.Path(exists=True), default=None)
@click.option("--static", "static_dir", type=click.Path(exists=True), default=None,
              help="directory with the browser UI to serve at /")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve_cmd(checkpoint_path, features, k, log_path, images_dir, static_dir, host, port):
    """Run the annotation session service."""
    import uvicorn

    from .service import SessionService, create_app

    model = Checkpoint.load(checkpoint_path).to_model()
    service = SessionService(
        model, load_features(features), k=k, log_path=log_path, images_dir=images_dir
    )
    app = create_app(service)
    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    click.echo(f"serving {Path(checkpoint_path).name} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("demo-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--images", "n_images", default=30, type=int)
@click.option("--feature-dim", default=64, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--kind", default="memorize", type=click.Choice(["memorize", "two-family"]))
def demo_data_cmd(out, n_images, feature_dim, seed, kind):
    """Generate a synthetic corpus + feature file for a quick start."""
    from . import toydata

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "memorize":
        records = toydata.memorization_corpus(n=n_images, seed=seed, min_len=9, max_len=9)
    else:
        records, _ = toydata.disambiguation_corpus(n_images=n_images, seed=seed)
    features = toydata.synthetic_features(
        [r.image_id for r in records], dim=feature_dim, seed=seed + 1
    )
    toydata.write_corpus(out_dir / "corpus.jsonl", records)
    toydata.write_features(out_dir / "features.jsonl", features)
    click.echo(f"wrote {len(records)} records to {out_dir}/corpus.jsonl and features.jsonl")


if __name__ == "__main__":
    sys.exit(main())
