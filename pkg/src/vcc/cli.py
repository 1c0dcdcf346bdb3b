"""Command-line front end for the connectome pipeline and its experiments.

Every command reads an optional JSON config file with flat dotted keys
("build.runs", "seed", ...); explicit command-line flags override the file,
and the VCC_SEED environment variable overrides a config-file seed.
Exit codes: 0 ok, 2 config error, 3 numeric validation failure, 4 bridge
failure. Failures print a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import checks, concepts, formats, graph as graph_mod, itcav, netcore, segment, toylab
from .bridgeclient import BridgeOracle
from .errors import BridgeError, InvalidInputError, VCCError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BRIDGE = 4


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _guard(fn):
    """Map library errors to the exit-code contract."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BridgeError as exc:
            _fail(EXIT_BRIDGE, type(exc).__name__, str(exc))
        except VCCError as exc:
            _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config with flat dotted keys.")
@click.pass_context
def main(ctx, config_path):
    """Build and analyze visual concept connectomes."""
    cfg = {}
    if config_path:
        try:
            cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_CONFIG, type(exc).__name__, f"bad config file: {exc}")
        if not isinstance(cfg, dict):
            _fail(EXIT_CONFIG, "InvalidInputError", "config root must be an object")
    ctx.obj = cfg


def _resolve(ctx, name: str, command: str):
    """Flag > VCC_SEED (seed only) > config file > click default."""
    source = ctx.get_parameter_source(name)
    value = ctx.params[name]
    if source == click.core.ParameterSource.COMMANDLINE:
        return value
    if name == "seed" and "VCC_SEED" in os.environ:
        try:
            return int(os.environ["VCC_SEED"])
        except ValueError:
            _fail(EXIT_CONFIG, "InvalidInputError",
                  f"VCC_SEED is not an integer: {os.environ['VCC_SEED']!r}")
    cfg = ctx.obj or {}
    dotted = name.replace("_", "-")
    for key in (f"{command}.{dotted}", dotted, f"{command}.{name}", name):
        if key in cfg:
            return cfg[key]
    return value


def _emit(obj, path: str | None = None):
    data = formats.canonical_json(obj)
    if path:
        Path(path).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


def _load_pool(pool_dir: Path) -> list[np.ndarray]:
    files = sorted(pool_dir.glob("*.png")) + sorted(pool_dir.glob("*.ppm"))
    if not files:
        raise InvalidInputError(f"no pool images in {pool_dir}")
    return [formats.image_to_float(formats.decode_image(f.read_bytes())) for f in files]


def _class_images(data_dir: Path, class_index: int, count: int) -> list[np.ndarray]:
    scenes = toylab.load_dataset(data_dir)
    images = [s.image for s in scenes if s.label == class_index]
    if len(images) < count:
        raise InvalidInputError(
            f"class {class_index} has {len(images)} images, need {count}")
    return images[:count]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@main.command("gen-data")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--classes", default=2, show_default=True)
@click.option("--per-class", default=60, show_default=True)
@click.option("--eval-per-class", default=20, show_default=True)
@click.option("--pool-size", default=60, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@_guard
def gen_data(ctx, out, classes, per_class, eval_per_class, pool_size, seed):
    """Generate the synthetic train/eval datasets and the random pool."""
    seed = int(_resolve(ctx, "seed", "gen-data"))
    classes = int(_resolve(ctx, "classes", "gen-data"))
    per_class = int(_resolve(ctx, "per_class", "gen-data"))
    eval_per_class = int(_resolve(ctx, "eval_per_class", "gen-data"))
    pool_size = int(_resolve(ctx, "pool_size", "gen-data"))
    out = Path(out)
    combos = toylab.default_classes(classes)
    toylab.save_dataset(toylab.generate_dataset(seed, combos, per_class), out / "train")
    toylab.save_dataset(toylab.generate_dataset(seed + 1_000_000, combos, eval_per_class),
                        out / "eval")
    pool_dir = out / "pool"
    pool_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(toylab.generate_random_pool(seed, pool_size, combos)):
        (pool_dir / f"pool_{i:05d}.png").write_bytes(
            formats.encode_image(formats.float_to_image(img)))
    _emit({"classes": classes, "train": per_class * classes,
           "eval": eval_per_class * classes, "pool": pool_size, "seed": seed})


@main.command("train")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=toylab.TrainRecipe.epochs, show_default=True)
@click.option("--lr", default=toylab.TrainRecipe.lr, show_default=True)
@click.pass_context
@_guard
def train(ctx, data, out, seed, epochs, lr):
    """Train the toy CNN on a generated dataset and save its manifest."""
    seed = int(_resolve(ctx, "seed", "train"))
    recipe = toylab.TrainRecipe(epochs=int(_resolve(ctx, "epochs", "train")),
                                lr=float(_resolve(ctx, "lr", "train")))
    dataset = toylab.load_dataset(Path(data) / "train"
                                  if (Path(data) / "train").is_dir() else data)
    model = toylab.train_toy_cnn(dataset, seed, recipe)
    formats.save_model(model, out)
    images = np.stack([s.image for s in dataset])
    labels = np.array([s.label for s in dataset])
    _emit({"accuracy": toylab.accuracy(model, images, labels),
           "model_hash": formats.model_hash(model), "seed": seed})


def _open_oracle(oracle: str, model_path: str, bridge_cmd: str | None):
    if oracle == "in-core":
        return formats.load_model(model_path)
    if oracle == "bridge":
        if not bridge_cmd:
            raise InvalidInputError("--bridge-cmd is required with --oracle bridge")
        return BridgeOracle(bridge_cmd.split() + [model_path])
    raise InvalidInputError(f"unknown oracle {oracle!r}")


@main.command("build")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--class-index", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--images", default=50, show_default=True, help="Target image count.")
@click.option("--runs", default=itcav.DEFAULT_RUNS, show_default=True)
@click.option("--alpha", default=itcav.DEFAULT_ALPHA, show_default=True)
@click.option("--compactness", default=segment.DEFAULT_COMPACTNESS, show_default=True)
@click.option("--k-max", default=concepts.DEFAULT_K, show_default=True)
@click.option("--eq5-literal-sign", is_flag=True, default=False,
              help="Score with the unnegated sensitivity formula.")
@click.option("--null-protocol", default="mu0", show_default=True,
              type=click.Choice(["mu0", "random-cav"]))
@click.option("--oracle", default="in-core", show_default=True,
              type=click.Choice(["in-core", "bridge"]))
@click.option("--bridge-cmd", default=None, help="Command line launching the bridge.")
@click.option("--jobs", default=1, show_default=True,
              help="Worker count; results are identical for any value.")
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@_guard
def build(ctx, model_path, data, class_index, out, images, runs, alpha, compactness,
          k_max, eq5_literal_sign, null_protocol, oracle, bridge_cmd, jobs, seed):
    """Build a VCC for one class and write it as canonical JSON."""
    seed = int(_resolve(ctx, "seed", "build"))
    images = int(_resolve(ctx, "images", "build"))
    class_index = int(_resolve(ctx, "class_index", "build"))
    config = graph_mod.BuildConfig(
        runs=int(_resolve(ctx, "runs", "build")),
        alpha=float(_resolve(ctx, "alpha", "build")),
        compactness=float(_resolve(ctx, "compactness", "build")),
        k_max=int(_resolve(ctx, "k_max", "build")),
        literal_sign=bool(_resolve(ctx, "eq5_literal_sign", "build")),
        null_protocol=str(_resolve(ctx, "null_protocol", "build")))
    data = Path(data)
    class_imgs = _class_images(data / "train", class_index, images)
    pool = _load_pool(data / "pool")
    model = _open_oracle(oracle, model_path, bridge_cmd)
    try:
        vcc = graph_mod.build_vcc(model, class_imgs, pool, class_index,
                                  config=config, seed=seed)
    finally:
        if isinstance(model, BridgeOracle):
            model.close()
    vcc.config["image_count"] = images
    formats.write_vcc_json(vcc, out)
    _emit({"concepts": [ly.concept_count for ly in vcc.layers],
           "edges": len(vcc.edges), "class_edges": len(vcc.class_edges),
           "warnings": vcc.warnings})


@main.command("metrics")
@click.option("--vcc", "vcc_path", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guard
def metrics(vcc_path, out):
    """Per-layer branching factor, concept count, and edge-weight statistics."""
    vcc = formats.read_vcc_json(vcc_path)
    stats = graph_mod.layer_metrics(vcc)
    _emit({str(k): v for k, v in stats.items()}, out)


def _rebuild_segments(model, vcc, data_dir: Path):
    class_imgs = _class_images(data_dir / "train", vcc.class_label,
                               vcc.config.get("image_count", 50))
    seg = segment.topdown_segment(model, class_imgs, vcc.tap_layers, seed=vcc.seed,
                                  compactness=vcc.config.get(
                                      "compactness", segment.DEFAULT_COMPACTNESS))
    return {s.segment_id: s for s in seg.all_segments()}


@main.command("aps-ls")
@click.option("--vcc", "vcc_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guard
def aps_ls(vcc_path, model_path, data, out):
    """APS-LS Pearson correlation over all concepts with class paths."""
    vcc = formats.read_vcc_json(vcc_path)
    model = formats.load_model(model_path)
    segments_by_id = _rebuild_segments(model, vcc, Path(data))
    pairs = {}
    for c in vcc.all_concepts():
        try:
            a = graph_mod.aps(vcc, c.concept_id)
        except VCCError:
            continue
        pairs[c.concept_id] = {
            "aps": a, "ls": graph_mod.ls(model, c, segments_by_id, vcc.class_label)}
    r = graph_mod.aps_ls_correlation(vcc, model, segments_by_id)
    _emit({"pearson_r": r, "concepts": pairs}, out)


@main.command("suppress")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--vcc", "vcc_path", default=None, type=click.Path(exists=True),
              help="Suppress along concept centroids from this graph; random otherwise.")
@click.option("--eps", default="0,0.5,1,2,4,8", show_default=True,
              help="Comma-separated increasing perturbation magnitudes.")
@click.option("--class-index", default=0, show_default=True,
              help="Target class whose accuracy is tracked.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@click.pass_context
@_guard
def suppress(ctx, model_path, data, vcc_path, eps, class_index, seed, out):
    """Target-class accuracy vs epsilon for concept (or random) suppression."""
    seed = int(_resolve(ctx, "seed", "suppress"))
    class_index = int(_resolve(ctx, "class_index", "suppress"))
    eps_grid = [float(v) for v in str(_resolve(ctx, "eps", "suppress")).split(",")]
    model = formats.load_model(model_path)
    eval_dir = Path(data) / "eval"
    scenes = toylab.load_dataset(eval_dir if eval_dir.is_dir() else data)
    directions = None
    layers = list(model.tap_layers)
    if vcc_path:
        vcc = formats.read_vcc_json(vcc_path)
        layers = list(vcc.tap_layers)
        class_index = vcc.class_label
        rng = np.random.default_rng([seed, 0x5C])
        directions = {}
        for ly in vcc.layers:
            if not ly.concepts:
                raise InvalidInputError(f"layer {ly.layer} has no concepts to suppress")
            directions[ly.layer] = ly.concepts[int(rng.integers(len(ly.concepts)))].centroid
    images = [s.image for s in scenes if s.label == class_index]
    if not images:
        raise InvalidInputError(f"no eval images of class {class_index}")
    labels = [class_index] * len(images)
    cfg = graph_mod.SuppressionConfig(epsilons=eps_grid, layers=layers,
                                      directions=directions, seed=seed)
    result = graph_mod.suppression_curve(model, images, labels, cfg)
    result["class"] = class_index
    result["mode"] = "concept" if vcc_path else "random"
    _emit(result, out)


@main.command("rf-report")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guard
def rf_report(model_path, out):
    """Theoretical receptive field at every tap layer of a model manifest."""
    model = formats.load_model(model_path)
    _emit({"receptive_fields": {str(t): netcore.receptive_field(model, t)
                                for t in model.tap_layers}}, out)


@main.command("compare")
@click.option("--vcc-a", required=True, type=click.Path(exists=True))
@click.option("--vcc-b", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@click.pass_context
@_guard
def compare(ctx, vcc_a, vcc_b, model_path, image_path, seed, out):
    """Assign one image's segments to the nearest concepts of two graphs."""
    seed = int(_resolve(ctx, "seed", "compare"))
    model = formats.load_model(model_path)
    image = formats.image_to_float(formats.decode_image(Path(image_path).read_bytes()))
    result = graph_mod.nearest_concept_diff(
        formats.read_vcc_json(vcc_a), formats.read_vcc_json(vcc_b), image, model, seed)
    result["tallies"] = {str(k): v for k, v in result["tallies"].items()}
    _emit(result, out)


@main.command("export-dot")
@click.option("--vcc", "vcc_path", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_guard
def export_dot(vcc_path, out):
    """Render a VCC as a DOT graph."""
    dot = formats.export_dot(formats.read_vcc_json(vcc_path))
    if out:
        Path(out).write_text(dot)
    else:
        sys.stdout.write(dot)


@main.command("validate")
@click.option("--gradients", is_flag=True, default=False,
              help="Check distance gradients against finite differences.")
@click.option("--trials", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@_guard
def validate(ctx, gradients, trials, seed):
    """Numeric self-checks; exits 3 when any check exceeds its tolerance."""
    seed = int(_resolve(ctx, "seed", "validate"))
    trials = int(_resolve(ctx, "trials", "validate"))
    if not gradients:
        _emit({"checks": []})
        return
    err = checks.gradient_validation(trials=trials, seed=seed)
    ok = err < checks.FD_TOLERANCE
    _emit({"checks": [{"name": "gradients", "max_relative_error": err,
                       "tolerance": checks.FD_TOLERANCE, "ok": ok}]})
    if not ok:
        _fail(EXIT_NUMERIC, "NumericValidationFailure",
              f"gradient max relative error {err} exceeds {checks.FD_TOLERANCE}")


if __name__ == "__main__":
    main()
