"""fvlab command line.

Every command writes into a run directory ``<root>/<command>-<hash>`` where the hash covers
the command, its resolved parameters and the content of its input files.  The root is
``--out``, else ``$FVLAB_OUT``, else ``./runs``.  A finished run is not repeated unless
``--force`` is given.  Each run directory holds:

  resolved_config.json  command, parameters, input digests and derived sub-seeds
  manifest.json         sha256 of every output file, exit status and summary

``fvlab replay <resolved_config.json>`` runs the same command again from that file.
``--config FILE`` on any command reads parameter defaults from a JSON object (either a flat
``{"param": value}`` mapping or a resolved config); flags given on the command line win.

Randomness: every random stream uses ``sub_seed(seed, tag)``, the first 4 bytes (little
endian) of ``sha256(f"{seed}:{tag}")``.  Tags are listed in each resolved config.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.  Errors print one
line ``error <CODE>: <message>`` on stderr.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__

ENV_OUT = "FVLAB_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class RunError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def sub_seed(seed: int, tag: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{tag}".encode()).digest()[:4], "little")


def file_digest(path) -> str:
    """sha256 of a file; a model manifest also covers its weight blob."""
    path = Path(path)
    if not path.exists():
        raise RunError("E_MISSING_INPUT", f"input file not found: {path}")
    h = hashlib.sha256(path.read_bytes())
    blob = path.with_suffix(".bin")
    if path.suffix == ".json" and blob.exists():
        h.update(blob.read_bytes())
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Run:
    """Context handed to a command body: the run directory, seeds and output bookkeeping."""

    def __init__(self, directory: Path, params: dict, seed: int):
        self.dir = directory
        self.params = params
        self.seed = seed
        self.subseeds = {}
        self.summary = {}

    def seed_for(self, tag: str) -> int:
        s = sub_seed(self.seed, tag)
        self.subseeds[tag] = s
        return s

    def path(self, name) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_csv(self, name, fields, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        return p


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if v is None:
        return ""
    return v


COMMANDS = {}  # name -> (body, input param names)


def _root(out) -> Path:
    return Path(out or os.environ.get(ENV_OUT) or "runs")


def execute(name: str, params: dict, out=None, force: bool = False) -> tuple[int, Path]:
    """Resolve, address and run one command; returns (exit code, run directory)."""
    body, input_names = COMMANDS[name]
    inputs = {}
    for key in input_names:
        val = params.get(key)
        if val in (None, "", "oracle0", "oracle1", "smiley"):
            continue
        inputs[key] = file_digest(val)
    config = {"command": name, "params": params, "inputs": inputs, "version": __version__}
    digest = hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]
    directory = _root(out) / f"{name.replace(' ', '-')}-{digest}"
    manifest = directory / "manifest.json"
    if manifest.exists() and not force:
        done = json.loads(manifest.read_text(encoding="utf-8"))
        click.echo(f"run {directory} exists (use --force to repeat)")
        return int(done.get("exit_code", 0)), directory
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    run = Run(directory, params, int(params.get("seed", 0)))
    try:
        ok = body(run, **params)
    except RunError:
        shutil.rmtree(directory, ignore_errors=True)
        raise
    except (ValueError, KeyError, OSError) as exc:
        shutil.rmtree(directory, ignore_errors=True)
        raise RunError("E_PRECONDITION", f"{type(exc).__name__}: {exc}".replace("\n", " ")) from exc
    config["subseeds"] = dict(sorted(run.subseeds.items()))
    config["digest"] = digest
    (directory / "resolved_config.json").write_text(json.dumps(config, indent=1, sort_keys=True) + "\n",
                                                    encoding="utf-8")
    outputs = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[p.relative_to(directory).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    code = EXIT_OK if ok is not False else EXIT_FAIL
    manifest.write_text(json.dumps({"outputs": outputs, "exit_code": code, "summary": run.summary},
                                   indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for k, v in run.summary.items():
        click.echo(f"{k}: {v}")
    click.echo(f"run {directory}")
    return code, directory


def _load_config(ctx, param, value):
    if value is None:
        return None
    try:
        data = json.loads(Path(value).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}") from exc
    if not isinstance(data, dict):
        raise click.BadParameter("config must be a JSON object")
    ctx.default_map = dict(data.get("params", data))
    return value


def command(group, name: str, inputs=()):
    """Register ``fn`` under ``group`` with the shared --seed/--out/--force/--config options."""
    def wrap(fn):
        full = f"{group.name} {name}" if group is not main else name

        @click.pass_context
        def cb(ctx, out, force, config, **params):
            params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
            code, _ = execute(full, params, out, force)
            ctx.exit(code)

        cb.__doc__ = fn.__doc__
        cb.__name__ = fn.__name__
        cb.__click_params__ = list(getattr(fn, "__click_params__", []))
        cb = click.option("--config", callback=_load_config, is_eager=True, expose_value=True,
                          type=click.Path(dir_okay=False), help="JSON file with parameter defaults.")(cb)
        cb = click.option("--force", is_flag=True, help="Repeat the run even if it already exists.")(cb)
        cb = click.option("--out", type=click.Path(file_okay=False), default=None,
                          help=f"Run root (default ${ENV_OUT} or ./runs).")(cb)
        cb = click.option("--seed", type=int, default=0, show_default=True, help="Root seed.")(cb)
        group.command(name, help=fn.__doc__)(cb)
        COMMANDS[full] = (fn, tuple(inputs))
        return fn
    return wrap


@click.group()
@click.version_option(__version__, prog_name="fvlab")
def main():
    """Feature-visualization reliability lab."""


@main.group()
def dataset():
    """Create or import datasets."""


@main.group()
def train():
    """Train models."""


@main.group()
def fool():
    """Build manipulated models."""


@main.group()
def detector():
    """Natural-versus-visualization detector."""


@main.group()
def audit():
    """Compare models."""


@main.group()
def theory():
    """Numeric checks of the min/max summary results."""


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _dataset(path):
    from .netgraph.data import Dataset

    try:
        return Dataset.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise RunError("E_BAD_INPUT", f"cannot read dataset {path}: {exc}") from exc


def _model(path):
    from .netgraph.modelio import ModelFormatError, load_model

    try:
        return load_model(path)
    except (OSError, ModelFormatError, KeyError, ValueError) as exc:
        raise RunError("E_BAD_INPUT", f"cannot read model {path}: {exc}") from exc


def _units(graph, specs):
    from .netgraph.graph import UnitRef

    out = []
    for s in specs:
        try:
            u = UnitRef.parse(s)
            graph.check_unit(u)
        except (ValueError, KeyError) as exc:
            raise RunError("E_BAD_UNIT", f"{s}: {exc}") from exc
        out.append(u)
    return out


def _int_list(text):
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise RunError("E_USAGE", f"not a comma-separated integer list: {text!r}") from exc


def _viz_config(steps, thresholds, lr, jitter, seed=0, record=False):
    from .featviz import VizConfig

    th = _int_list(thresholds) if thresholds else tuple(t for t in (1, 8, 32, 128, 512) if t < steps) + (steps,)
    try:
        return VizConfig(steps=steps, thresholds=th, lr=lr, jitter=jitter, seed=seed, record_gradients=record)
    except ValueError as exc:
        raise RunError("E_USAGE", str(exc)) from exc


def _default_layers(graph):
    return [n for n, s in graph.layers.items() if s.kind in ("conv", "relu", "dense")]


# --------------------------------------------------------------------------
# datasets and training
# --------------------------------------------------------------------------

@command(dataset, "gen")
@click.option("--classes", type=int, default=10, show_default=True)
@click.option("--per-class", type=int, default=120, show_default=True)
@click.option("--size", type=int, default=32, show_default=True, help="Square image side.")
@click.option("--channels", type=int, default=3, show_default=True)
@click.option("--noise", type=float, default=0.03, show_default=True)
@click.option("--tint", type=float, default=0.08, show_default=True)
@click.option("--test-fraction", type=float, default=0.25, show_default=True)
def dataset_gen(run, classes, per_class, size, channels, noise, tint, test_fraction, seed):
    """Procedural shape dataset split into train.npz and test.npz."""
    from .imageio import write_pnm
    from .netgraph.data import generate_synthetic_dataset, train_test_split

    data = generate_synthetic_dataset(classes, per_class, (size, size), run.seed_for("data"), channels, noise, tint)
    tr, te = train_test_split(data, test_fraction, run.seed_for("split"))
    tr.save(run.path("train.npz"))
    te.save(run.path("test.npz"))
    ext = "ppm" if channels == 3 else "pgm"
    rows = []
    for split, d in (("train", tr), ("test", te)):
        for c in range(classes):
            sel = d.labels == c
            rows.append({"split": split, "class": c, "count": int(sel.sum()),
                         "mean_pixel": float(d.images[sel].mean()) if sel.any() else float("nan")})
            if split == "train" and sel.any():
                write_pnm(run.path(f"samples/class_{c:02d}.{ext}"), d.images[np.flatnonzero(sel)[0]])
    run.write_csv("summary.csv", ("split", "class", "count", "mean_pixel"), rows)
    run.summary.update(train=len(tr), test=len(te))


@command(dataset, "import", inputs=("images", "labels", "test_images", "test_labels"))
@click.option("--images", required=True, type=click.Path())
@click.option("--labels", required=True, type=click.Path())
@click.option("--test-images", type=click.Path(), default=None)
@click.option("--test-labels", type=click.Path(), default=None)
@click.option("--classes", type=int, default=None)
def dataset_import(run, images, labels, test_images, test_labels, classes, seed):
    """Convert IDX image/label files into dataset archives."""
    from .netgraph.data import IDXFormatError, load_idx_dataset

    pairs = [("train", images, labels)]
    if test_images or test_labels:
        if not (test_images and test_labels):
            raise RunError("E_USAGE", "--test-images and --test-labels go together")
        pairs.append(("test", test_images, test_labels))
    rows = []
    for split, ip, lp in pairs:
        try:
            d = load_idx_dataset(ip, lp, split, classes)
        except IDXFormatError as exc:
            raise RunError("E_BAD_INPUT", str(exc)) from exc
        d.save(run.path(f"{split}.npz"))
        for c in range(d.classes):
            rows.append({"split": split, "class": c, "count": int((d.labels == c).sum())})
        run.summary[split] = len(d)
    run.write_csv("summary.csv", ("split", "class", "count"), rows)


@command(train, "base", inputs=("data", "test"))
@click.option("--data", required=True, type=click.Path(), help="Training dataset (.npz).")
@click.option("--test", type=click.Path(), default=None, help="Held-out dataset (.npz).")
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--lr", type=float, default=0.02, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--weight-decay", type=float, default=5e-5, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
def train_base(run, data, test, epochs, lr, momentum, weight_decay, batch_size, seed):
    """Train the four-block convolutional classifier."""
    from .netgraph.models import build_base_model
    from .netgraph.modelio import save_model
    from .netgraph.train import TrainHyper, accuracy, sgd_train

    tr = _dataset(data)
    g = build_base_model(tr.images.shape[1:], tr.classes, seed=run.seed_for("init"))
    hyper = TrainHyper(lr, momentum, weight_decay, epochs, batch_size, run.seed_for("shuffle"))
    res = sgd_train(g, tr, hyper)
    save_model(res.graph, run.path("model.json"))
    run.write_csv("history.csv", ("epoch", "loss"), ({"epoch": i + 1, "loss": v} for i, v in enumerate(res.losses)))
    rows = [{"split": "train", "accuracy": accuracy(res.graph, tr.images, tr.labels), "n": len(tr)}]
    if test:
        te = _dataset(test)
        rows.append({"split": "test", "accuracy": accuracy(res.graph, te.images, te.labels), "n": len(te)})
    run.write_csv("metrics.csv", ("split", "accuracy", "n"), rows)
    run.summary.update({f"{r['split']}_accuracy": round(r["accuracy"], 4) for r in rows})


# --------------------------------------------------------------------------
# visualization
# --------------------------------------------------------------------------

@command(main, "viz", inputs=("model",))
@click.option("--model", required=True, type=click.Path())
@click.option("--unit", "units", multiple=True, required=True, help="layer:channel[:HxW], repeatable.")
@click.option("--steps", type=int, default=512, show_default=True)
@click.option("--thresholds", default="", help="Comma-separated steps to record (default 1,8,32,128,512).")
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--jitter", type=int, default=2, show_default=True)
def viz(run, model, units, steps, thresholds, lr, jitter, seed):
    """Activation maximization for one or more units."""
    from .featviz import maximize_units, save_trajectory

    g = _model(model)
    us = _units(g, units)
    cfg = _viz_config(steps, thresholds, lr, jitter)
    seeds = [run.seed_for(f"viz:{u.describe()}") for u in us]
    rows = []
    for i, t in enumerate(maximize_units(g, us, cfg, seeds=seeds)):
        save_trajectory(t, run.path(f"unit_{i:02d}"))
        rows.append({"unit": t.unit.describe(), "step": 0, "activation": t.start_activation})
        rows += [{"unit": t.unit.describe(), "step": s, "activation": a} for s, a in zip(t.thresholds, t.activations)]
    run.write_csv("activations.csv", ("unit", "step", "activation"), rows)
    run.summary["units"] = len(us)


# --------------------------------------------------------------------------
# attacks
# --------------------------------------------------------------------------

@command(fool, "circuit", inputs=("model", "detector_path", "decoy", "data", "probe"))
@click.option("--model", required=True, type=click.Path())
@click.option("--detector", "detector_path", default="oracle1", show_default=True,
              help="Detector model file, or oracle0 / oracle1.")
@click.option("--victim", type=int, default=None, help="Output unit replaced by the gate (single mode).")
@click.option("--decoy", default=None, help="PGM/PPM decoy image or 'smiley' (single mode).")
@click.option("--offset", type=int, default=None, help="Permutation mode: unit i shows unit i+offset.")
@click.option("--k", type=float, default=None, help="Gate constant (default: derived from --data).")
@click.option("--data", type=click.Path(), default=None, help="Natural data for choosing and checking k.")
@click.option("--probe", type=click.Path(), default=None, help=".npy of visualization images for choosing k.")
def fool_circuit(run, model, detector_path, victim, decoy, offset, k, data, probe, seed):
    """Graft the gated fooling circuit onto the output layer."""
    from .fooling.circuit import CircuitError, FoolingCircuitSpec, choose_k, graft_fooling_circuit, smiley_image
    from .imageio import PNMFormatError, read_pnm
    from .netgraph.modelio import save_model

    base = _model(model)
    det = detector_path if detector_path in ("oracle0", "oracle1") else _model(detector_path)
    image = None
    if decoy == "smiley":
        image = smiley_image(base.input_shape[1:], base.input_shape[0])
    elif decoy:
        try:
            image = read_pnm(decoy)
        except (OSError, PNMFormatError) as exc:
            raise RunError("E_BAD_INPUT", f"cannot read decoy {decoy}: {exc}") from exc
        image = image[None] if image.ndim == 2 else image
    natural = _dataset(data) if data else None
    if k is None:
        if natural is None:
            raise RunError("E_USAGE", "give --k or --data to derive it")
        probes = np.load(probe) if probe else np.zeros((0,) + base.input_shape)
        k = choose_k(base, natural, probes, image)
    try:
        spec = FoolingCircuitSpec(float(k), det, victim, image, offset)
        g = graft_fooling_circuit(base, spec, natural)
    except CircuitError as exc:
        raise RunError("E_PRECONDITION", str(exc)) from exc
    save_model(g, run.path("model.json"))
    rows = [{"key": k_, "value": v} for k_, v in sorted(g.meta["attack"].items())]
    run.write_csv("circuit.csv", ("key", "value"), rows)
    run.summary.update(mode=spec.mode(), k=float(k), output=g.output)


@command(fool, "silent", inputs=("model", "data", "target"))
@click.option("--model", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(), help="Natural data the hijack must stay silent on.")
@click.option("--layer", default="conv1", show_default=True, help="Conv layer whose block is wrapped.")
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--beta", type=float, default=4.0, show_default=True)
@click.option("--margin", type=float, default=0.05, show_default=True)
@click.option("--target", type=click.Path(), default=None, help=".npy target filter (C_in, kh, kw).")
def fool_silent(run, model, data, layer, alpha, beta, margin, target, seed):
    """Add a silent hijack unit next to every channel of a conv block."""
    from .fooling.silent import InjectionError, SilentInjectionSpec, inject_silent_hijack
    from .netgraph.modelio import save_model

    base = _model(model)
    natural = _dataset(data)
    tgt = np.load(target) if target else None
    try:
        g, rep = inject_silent_hijack(base, SilentInjectionSpec(layer, alpha, beta, tgt, margin), natural)
    except InjectionError as exc:
        raise RunError("E_PRECONDITION", str(exc)) from exc
    save_model(g, run.path("model.json"))
    rows = []
    for c in range(len(rep.bias)):
        hij = c in rep.units
        rows.append({"channel": c, "hijacked": hij,
                     "orthogonality": rep.orthogonality[rep.units.index(c)] if hij else None,
                     "natural_max": rep.natural_max[c], "bias": rep.bias[c], "ratio_bias": rep.ratio_bias[c]})
    run.write_csv("hijack.csv", ("channel", "hijacked", "orthogonality", "natural_max", "bias", "ratio_bias"), rows)
    run.summary.update(hijacked=len(rep.units), rejected=len(rep.rejected), block_output=rep.block_output)


# --------------------------------------------------------------------------
# detector
# --------------------------------------------------------------------------

@command(detector, "train", inputs=("model", "data"))
@click.option("--model", required=True, type=click.Path(), help="Model whose visualizations are detected.")
@click.option("--data", required=True, type=click.Path(), help="Natural training images.")
@click.option("--unit", "units", multiple=True, help="Pool units (default: even ReLU channels + outputs 1..).")
@click.option("--steps", type=int, default=512, show_default=True)
@click.option("--epochs", type=int, default=8, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--weight-decay", type=float, default=5e-5, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
def detector_train(run, model, data, units, steps, epochs, lr, momentum, weight_decay, batch_size, seed):
    """Build a visualization pool and train the detector on it."""
    from .featviz import VizConfig
    from .fooling.detector import detector_dataset, detector_units, log_thresholds, synthetic_pool
    from .netgraph.modelio import save_model
    from .netgraph.models import build_detector
    from .netgraph.train import TrainHyper, sgd_train

    g = _model(model)
    natural = _dataset(data)
    us = _units(g, units) if units else detector_units(g, 0, output_skip=(0,))
    seeds = [run.seed_for(f"pool:{u.describe()}") for u in us]
    cfg = VizConfig(steps=steps, thresholds=log_thresholds(steps, min(15, steps)))
    pool = synthetic_pool(g, us, cfg, seeds=seeds)
    np.save(run.path("pool.npy"), pool)
    hyper = TrainHyper(lr, momentum, weight_decay, epochs, batch_size, run.seed_for("detector"))
    res = sgd_train(build_detector(g.input_shape, seed=hyper.seed), detector_dataset(natural, pool), hyper)
    save_model(res.graph, run.path("detector.json"))
    run.write_csv("history.csv", ("epoch", "loss"), ({"epoch": i + 1, "loss": v} for i, v in enumerate(res.losses)))
    run.summary.update(pool=len(pool), natural=len(natural))


@command(detector, "eval", inputs=("detector_path", "model", "data"))
@click.option("--detector", "detector_path", required=True, type=click.Path())
@click.option("--model", required=True, type=click.Path(), help="Model whose visualizations are held out.")
@click.option("--data", required=True, type=click.Path(), help="Held-out natural images.")
@click.option("--unit", "units", multiple=True, help="Held-out units (default: odd channels of the later ReLUs).")
@click.option("--steps", type=int, default=512, show_default=True)
@click.option("--min-overall", type=float, default=0.95, show_default=True)
@click.option("--min-class", type=float, default=0.90, show_default=True)
def detector_eval(run, detector_path, model, data, units, steps, min_overall, min_class, seed):
    """Held-out accuracy on natural images and fresh visualizations."""
    from .featviz import VizConfig
    from .fooling.detector import detector_accuracy, detector_units, log_thresholds, synthetic_pool

    det = _model(detector_path)
    g = _model(model)
    natural = _dataset(data)
    relus = [n for n, s in g.layers.items() if s.kind == "relu"]
    us = _units(g, units) if units else detector_units(g, 1, relus[1:])
    seeds = [run.seed_for(f"heldout:{u.describe()}") for u in us]
    cfg = VizConfig(steps=steps, thresholds=log_thresholds(steps, min(15, steps)))
    pool = synthetic_pool(g, us, cfg, seeds=seeds)
    acc = detector_accuracy(det, natural.images, pool)
    rows = [{"class": c, "accuracy": acc[c], "n": acc.get(f"n_{c}", acc["n_natural"] + acc["n_synthetic"])}
            for c in ("overall", "natural", "synthetic")]
    run.write_csv("accuracy.csv", ("class", "accuracy", "n"), rows)
    ok = acc["overall"] >= min_overall and min(acc["natural"], acc["synthetic"]) >= min_class
    run.summary.update(overall=round(acc["overall"], 4), natural=round(acc["natural"], 4),
                       synthetic=round(acc["synthetic"], 4), status="pass" if ok else "FAIL")
    return ok


# --------------------------------------------------------------------------
# audit and analyses
# --------------------------------------------------------------------------

@command(audit, "preserve", inputs=("original", "modified", "data", "detector_path"))
@click.option("--original", required=True, type=click.Path())
@click.option("--modified", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--detector", "detector_path", type=click.Path(), default=None,
              help="Restrict the output check to inputs this detector calls natural.")
@click.option("--max-diff", type=float, default=1e-5, show_default=True)
@click.option("--min-agreement", type=float, default=0.99, show_default=True)
def audit_preserve(run, original, modified, data, detector_path, max_diff, min_agreement, seed):
    """Output deviation and top-k agreement between two models."""
    from .fooling.audit import verify_preservation
    from .fooling.detector import NATURAL, detector_decisions

    a, b, d = _model(original), _model(modified), _dataset(data)
    mask = None
    if detector_path:
        mask = detector_decisions(_model(detector_path), d.images) == NATURAL
    rep = verify_preservation(a, b, d, mask)
    ok = rep["max_abs_diff"] <= max_diff and rep["top1_agreement"] >= min_agreement
    run.write_csv("preservation.csv", ("metric", "value"), ({"metric": k, "value": v} for k, v in rep.items()))
    run.summary.update(max_abs_diff=rep["max_abs_diff"], top1_agreement=rep["top1_agreement"],
                       status="pass" if ok else "FAIL")
    return ok


@command(main, "pathsim", inputs=("model", "data"))
@click.option("--model", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--layer", "layers", multiple=True, help="Layers to compare (default: conv, relu and dense).")
@click.option("--metric", type=click.Choice(["spearman", "pearson", "cosine"]), default="spearman",
              show_default=True)
@click.option("--per-class", type=int, default=20, show_default=True)
@click.option("--viz-per-class", type=int, default=3, show_default=True)
@click.option("--steps", type=int, default=512, show_default=True)
@click.option("--stride", type=int, default=1, show_default=True)
def pathsim(run, model, data, layers, metric, per_class, viz_per_class, steps, stride, seed):
    """Layerwise similarity of natural images and class visualizations."""
    from .analysis.pathsim import similarity_report
    from .featviz import maximize_units
    from .netgraph.graph import UnitRef

    g = _model(model)
    d = _dataset(data)
    layers = list(layers) or _default_layers(g)
    n_out = g.shapes()[g.output][0]
    units = [UnitRef(g.output, c) for c in range(n_out) for _ in range(viz_per_class)]
    seeds = [run.seed_for(f"pathsim:{u.channel}:{i % viz_per_class}") for i, u in enumerate(units)]
    trs = maximize_units(g, units, _viz_config(steps, str(steps), 0.05, 2), seeds=seeds)
    viz_images = {}
    for t in trs:
        viz_images.setdefault(t.unit.channel, []).append(t.final)
    try:
        rep = similarity_report(g, d.images, d.labels, viz_images, layers, metric, per_class, stride,
                                seed=run.seed_for("pathsim:sample"))
    except ValueError as exc:
        raise RunError("E_PRECONDITION", str(exc)) from exc
    with open(run.path("similarity.csv"), "w", newline="", encoding="utf-8") as fh:
        rep.to_csv(fh)
    run.summary.update(layers=len(layers), excluded=len(rep.excluded), metric=metric)


@command(main, "census", inputs=("model", "data"))
@click.option("--model", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(), help="The full training set.")
@click.option("--layer", "layers", multiple=True, help="Post-ReLU layers (default: all ReLU layers).")
def census(run, model, data, layers, seed):
    """Count units and channels that never activate on the data."""
    from .analysis.census import silent_census

    g = _model(model)
    c = silent_census(g, _dataset(data), list(layers) or None)
    rows = [{"layer": r.layer, "units": r.units, "silent_units": r.silent_units, "channels": r.channels,
             "silent_channels": r.silent_channels, "silent_channel_ids": " ".join(map(str, r.silent_channel_ids))}
            for r in c.per_layer]
    rows.append({"layer": "total", "units": c.total_units, "silent_units": c.silent_units,
                 "channels": c.total_channels, "silent_channels": c.silent_channels, "silent_channel_ids": ""})
    run.write_csv("census.csv", ("layer", "units", "silent_units", "channels", "silent_channels",
                                 "silent_channel_ids"), rows)
    run.summary.update(silent_units=c.silent_units, unit_fraction=round(c.unit_fraction, 6),
                       silent_channels=c.silent_channels)


@command(main, "linearity", inputs=("model", "scores"))
@click.option("--model", required=True, type=click.Path())
@click.option("--unit", "units", multiple=True, required=True)
@click.option("--starts", type=int, default=3, show_default=True, help="Start images per unit.")
@click.option("--steps", type=int, default=512, show_default=True)
@click.option("--prefix", type=int, default=None, help="Correlate AGA over the first N angles only.")
@click.option("--scores", type=click.Path(), default=None, help="CSV of unit_id,score.")
def linearity(run, model, units, starts, steps, prefix, scores, seed):
    """Gradient path angles and line distances of visualization trajectories."""
    from .analysis.linearity import linearity_report, read_scores
    from .featviz import maximize_units

    g = _model(model)
    us = _units(g, units)
    rows_u = [u for u in us for _ in range(starts)]
    seeds = [run.seed_for(f"linearity:{u.describe()}:{i % starts}") for i, u in enumerate(rows_u)]
    trs = maximize_units(g, rows_u, _viz_config(steps, "", 0.05, 2, record=True), seeds=seeds)
    sc = None
    if scores:
        try:
            sc = read_scores(scores)
        except (OSError, ValueError) as exc:
            raise RunError("E_BAD_INPUT", f"cannot read scores: {exc}") from exc
    rep = linearity_report(trs, sc, prefix)
    run.write_csv("agpa.csv", ("step", "agpa"), ({"step": j + 1, "agpa": v} for j, v in enumerate(rep.agpa_curve)))
    run.write_csv("aldp.csv", ("index", "aldp"), ({"index": j, "aldp": v} for j, v in enumerate(rep.aldp_curve)))
    fields = ("aga", "prefix_aga", "ald", "excluded", "static")
    run.write_csv("units.csv", ("unit",) + fields,
                  ({"unit": k, **{f: v[f] for f in fields}}
                   for k, v in rep.per_unit.items()))
    if rep.correlation:
        run.write_csv("correlation.csv", ("metric", "r", "p", "n"),
                      ({"metric": m, "r": rep.correlation[m][0], "p": rep.correlation[m][1],
                        "n": rep.correlation["n"]} for m in ("aga", "ald") if m in rep.correlation))
    run.summary.update(aga=round(rep.aga, 6), ald=round(rep.ald, 6))


# --------------------------------------------------------------------------
# theory
# --------------------------------------------------------------------------

@command(theory, "verify")
@click.option("--class", "classes", multiple=True,
              help="Function class, e.g. convex or lipschitz(0.5) (default: all).")
@click.option("--seeds", type=int, default=500, show_default=True, help="Seeds --seed .. --seed+N-1.")
def theory_verify(run, classes, seeds, seed):
    """Counterexample pairs and exact decoders, one CSV row per seed."""
    from .theory import NEGATIVE_CLASSES, POSITIVE_CLASSES, GridError, reports_to_csv, run_suite

    classes = list(classes) or list(NEGATIVE_CLASSES + POSITIVE_CLASSES)
    try:
        reps = run_suite(classes, seeds, start=seed)
    except GridError as exc:
        raise RunError("E_USAGE", str(exc)) from exc
    with open(run.path("bounds.csv"), "w", newline="", encoding="utf-8") as fh:
        reports_to_csv(reps, fh)
    failed = sum(not r.passed for r in reps)
    run.summary.update(reports=len(reps), failed=failed, status="pass" if not failed else "FAIL")
    return failed == 0


@command(theory, "demo")
@click.option("--seeds", type=int, default=20, show_default=True)
def theory_demo(run, seeds, seed):
    """Which questions a min/max summary answers, per class."""
    from .theory import demo_table, format_table

    rows = demo_table(seeds)
    run.write_csv("table.csv", ("class", "exactly", "eps_approx", "closer_to_min_or_max"),
                  ({"class": r[0], "exactly": r[1], "eps_approx": r[2], "closer_to_min_or_max": r[3]}
                   for r in rows))
    click.echo(format_table(rows))
    ok = all("?" not in r for r in rows)
    run.summary["status"] = "pass" if ok else "FAIL"
    return ok


@main.command()
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--force", is_flag=True)
@click.pass_context
def replay(ctx, config_file, out, force):
    """Run a resolved_config.json again and check its inputs are unchanged."""
    try:
        cfg = json.loads(Path(config_file).read_text(encoding="utf-8"))
        name, params = cfg["command"], cfg["params"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RunError("E_BAD_CONFIG", f"cannot read resolved config: {exc}") from exc
    if name not in COMMANDS:
        raise RunError("E_BAD_CONFIG", f"unknown command {name!r}")
    for key, digest in cfg.get("inputs", {}).items():
        if file_digest(params[key]) != digest:
            raise RunError("E_INPUT_CHANGED", f"input {key}={params[key]} differs from the recorded run")
    code, _ = execute(name, params, out, force)
    ctx.exit(code)


def cli(argv=None) -> int:
    """Entry point returning the exit code instead of raising SystemExit."""
    try:
        rc = main.main(args=argv, prog_name="fvlab", standalone_mode=False)
    except RunError as exc:
        click.echo(f"error {exc.code}: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        click.echo(f"error E_USAGE: {exc.format_message()}".replace("\n", " "), err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    return rc if isinstance(rc, int) else EXIT_OK


def run_main():
    sys.exit(cli())
