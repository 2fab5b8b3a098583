"""Command-line entry points wiring the pipeline stages together.

Subcommands mirror the two-phase training flow:

    avfuse extract            audio -> spectrogram cache (mel/gam/cqt)
    avfuse train-phase1       one backbone per feature / image stream
    avfuse export-embeddings  frozen backbones -> embedding cache
    avfuse train-phase2       fusion layer + dense head over embeddings
    avfuse evaluate           report accuracy / confusion for one mode

Every run echoes its effective configuration next to its primary output
so results are reproducible from the run directory alone.  Exit codes:
0 success, 1 runtime failure, 2 usage error.  The AVFUSE_SEED
environment variable overrides any configured seed.
"""

import argparse
import multiprocessing
import os
import sys

import numpy as np

from . import audio_io, backbones, data_io, dsp, evaluation, fusion, nn, training
from .errors import AvfuseError, ConfigError, ContractError, NotFoundError
from .kernels import BACKEND as KERNEL_BACKEND

DEFAULTS = {
    "seed": 0,
    "epochs": 15,
    "batch_size": 16,
    "learning_rate": 1e-3,
    "mixup_alpha": 0.4,
    "lambda_l2": 1e-4,
    "features": "mel,gam,cqt",
    "workers": 0,  # 0 -> logical core count
    "split": "",
    "mode": "av",
    "fusion": "f4",
    "tap": "fc10",
}

_CLI_MODES = {"audio": "audio_only", "visual": "visual_only", "av": "audio_visual"}


def _read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


class RunConfig:
    """Layered configuration: defaults < config file < flags < AVFUSE_SEED."""

    def __init__(self, args):
        self._file = _read_config_file(args.config) if getattr(args, "config", None) else {}
        self._args = args

    def get(self, key):
        flag = getattr(self._args, key, None)
        if flag is not None:
            value = flag
        elif key in self._file:
            value = type(DEFAULTS[key])(self._file[key])
        else:
            value = DEFAULTS[key]
        if key == "seed":
            env = os.environ.get("AVFUSE_SEED")
            if env is not None:
                value = int(env)
        return value

    def effective(self, command: str, extra: dict) -> dict:
        out = {"command": command, "kernel_backend": KERNEL_BACKEND}
        out.update({k: self.get(k) for k in sorted(DEFAULTS)})
        out.update(extra)
        return out


def _echo_config(path, effective: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(effective):
            fh.write(f"{key}={effective[key]}\n")


def _train_config(cfg: RunConfig) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=cfg.get("epochs"),
        batch_size=cfg.get("batch_size"),
        learning_rate=cfg.get("learning_rate"),
        seed=cfg.get("seed"),
        mixup=training.MixupConfig(alpha=cfg.get("mixup_alpha")),
        loss=training.LossConfig(lambda_l2=cfg.get("lambda_l2")),
    )


def _manifest_split(manifest, split: str):
    entries = manifest.split(split) if split else list(manifest)
    if not entries and split:
        entries = list(manifest)  # untagged manifests: use everything
    return entries


# --- extract -----------------------------------------------------------------

def _extract_one(task):
    sample_id, path, kinds = task
    try:
        clip = audio_io.read_wav(path)
        feats = dsp.extract_features(clip, kinds)
        return sample_id, {k: s.data.astype(np.float32) for k, s in feats.items()}, None
    except (AvfuseError, OSError) as exc:
        return sample_id, None, f"{path}: {exc}"


def cmd_extract(args) -> int:
    cfg = RunConfig(args)
    kinds = tuple(k for k in cfg.get("features").split(",") if k)
    for k in kinds:
        if k not in dsp.FEATURE_KINDS:
            raise ConfigError(f"unknown feature {k!r} (expected from {dsp.FEATURE_KINDS})")
    manifest = data_io.parse_manifest(args.manifest)
    workers = cfg.get("workers") or (os.cpu_count() or 1)

    tasks = [
        (e.sample_id, manifest.resolve(e.audio_path), kinds) for e in manifest
    ]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = list(pool.imap(_extract_one, tasks))
    else:
        results = [_extract_one(t) for t in tasks]

    entries, failures = {}, []
    for sample_id, feats, error in results:
        if error is not None:
            failures.append((sample_id, error))
            continue
        for kind, arr in feats.items():
            entries[data_io.spectrogram_key(kind, sample_id)] = arr
    data_io.write_container(args.out_cache, entries)
    _echo_config(
        args.out_cache + ".config.txt",
        cfg.effective("extract", {
            "manifest": args.manifest, "out_cache": args.out_cache,
            "n_samples": len(tasks), "n_failed": len(failures),
        }),
    )
    print(f"extracted {len(entries)} spectrograms from {len(tasks) - len(failures)} clips")
    if failures:
        for sample_id, error in failures:
            print(f"error: {sample_id}: {error}", file=sys.stderr)
        print(f"error: {len(failures)} of {len(tasks)} clips failed", file=sys.stderr)
        return 1
    return 0


# --- phase I -----------------------------------------------------------------

def _audio_inputs(cache, entries, feature: str):
    inputs = []
    for e in entries:
        key = data_io.spectrogram_key(feature, e.sample_id)
        if key not in cache:
            raise NotFoundError(
                f"cache has no {feature!r} spectrogram for sample {e.sample_id!r}; "
                f"run extract with that feature first"
            )
        inputs.append(cache.read(key))
    return np.stack(inputs), data_io.one_hot([e.label for e in entries])


def _visual_inputs(manifest, entries):
    images, labels = [], []
    for e in entries:
        if not e.image_paths:
            raise NotFoundError(f"sample {e.sample_id!r} lists no images")
        for path in e.image_paths:
            images.append(backbones.load_image(manifest.resolve(path)))
            labels.append(e.label)
    return np.stack(images), data_io.one_hot(labels)


def cmd_train_phase1(args) -> int:
    cfg = RunConfig(args)
    kind = args.model
    manifest = data_io.parse_manifest(args.manifest)
    entries = _manifest_split(manifest, cfg.get("split") or "train")
    if kind in backbones.AUDIO_KINDS:
        cache = data_io.ArrayContainer.open(args.cache)
        inputs, labels = _audio_inputs(cache, entries, backbones.KIND_FEATURE[kind])
    else:
        inputs, labels = _visual_inputs(manifest, entries)

    model = backbones.build_backbone(kind, seed=cfg.get("seed"))
    model, history = training.train_phase1(model, inputs, labels, _train_config(cfg))
    data_io.checkpoint_save(args.out_checkpoint, model)
    data_io.write_history(args.out_checkpoint + ".history.csv", history)
    _echo_config(
        args.out_checkpoint + ".config.txt",
        cfg.effective("train-phase1", {
            "model": kind, "manifest": args.manifest,
            "cache": args.cache or "", "out_checkpoint": args.out_checkpoint,
            "n_samples": len(inputs),
        }),
    )
    final = history[-1]
    print(f"{kind}: {len(history)} epochs, loss {final[1]:.4f}, accuracy {final[2]*100:.1f}%")
    return 0


# --- embedding export ---------------------------------------------------------

def _load_checkpoints(paths):
    models = {}
    for path in paths:
        model = data_io.checkpoint_load(path)
        if not isinstance(model, backbones.BackboneModel):
            raise ConfigError(f"{path} is not a backbone checkpoint")
        models[model.kind] = model
    missing = [k for k in backbones.MODEL_KINDS if k not in models]
    if missing:
        raise ConfigError(f"missing checkpoints for model kinds: {missing}")
    return models


def cmd_export_embeddings(args) -> int:
    cfg = RunConfig(args)
    tap = cfg.get("tap")
    if tap not in backbones.TAPS:
        raise ConfigError(f"unknown tap {tap!r} (expected fc1024 or fc10)")
    manifest = data_io.parse_manifest(args.manifest)
    models = _load_checkpoints(args.checkpoints)
    spec_cache = data_io.ArrayContainer.open(args.cache)

    entries = {}
    for e in manifest:
        for kind in backbones.AUDIO_KINDS:
            key = data_io.spectrogram_key(backbones.KIND_FEATURE[kind], e.sample_id)
            if key not in spec_cache:
                raise NotFoundError(
                    f"cache has no {backbones.KIND_FEATURE[kind]!r} spectrogram "
                    f"for sample {e.sample_id!r}"
                )
            emb = backbones.tap_embedding(models[kind], spec_cache.read(key), tap)
            entries[data_io.embedding_key(tap, kind, e.sample_id)] = emb.astype(np.float32)
        if not e.image_paths:
            raise NotFoundError(f"sample {e.sample_id!r} lists no images")
        frames = np.stack([backbones.load_image(manifest.resolve(p)) for p in e.image_paths])
        for kind in backbones.VISUAL_KINDS:
            per_frame = backbones.tap_embedding(models[kind], frames, tap)
            entries[data_io.embedding_key(tap, kind, e.sample_id)] = (
                per_frame.mean(axis=0).astype(np.float32)
            )
    data_io.write_container(args.out_cache, entries)
    _echo_config(
        args.out_cache + ".config.txt",
        cfg.effective("export-embeddings", {
            "manifest": args.manifest, "cache": args.cache,
            "out_cache": args.out_cache,
            "checkpoints": ";".join(args.checkpoints),
        }),
    )
    print(f"exported {len(entries)} embeddings at tap {tap} for {len(manifest)} samples")
    return 0


# --- phase II ----------------------------------------------------------------

def _load_sets(cache, entries, tap: str):
    sets = [
        backbones.load_embedding_set(cache, e.sample_id, tap) for e in entries
    ]
    return backbones.stack_sets(sets)


def _check_cache_tap(cache, tap: str, method_id: str) -> None:
    prefixes = {key.split("/")[1] for key in cache.keys() if key.startswith("emb/")}
    if prefixes and tap not in prefixes:
        raise ContractError(
            f"fusion method {method_id} needs embeddings at tap {tap}, but the "
            f"cache holds tap(s) {sorted(prefixes)}"
        )


def cmd_train_phase2(args) -> int:
    cfg = RunConfig(args)
    method = fusion.fusion_method(cfg.get("fusion"))
    mode = _CLI_MODES.get(cfg.get("mode"))
    if mode is None:
        raise ConfigError(f"unknown mode {cfg.get('mode')!r} (expected audio/visual/av)")
    manifest = data_io.parse_manifest(args.manifest)
    entries = _manifest_split(manifest, cfg.get("split") or "train")
    cache = data_io.ArrayContainer.open(args.cache)
    _check_cache_tap(cache, method.tap, method.id)
    sets = _load_sets(cache, entries, method.tap)
    labels = data_io.one_hot([e.label for e in entries])

    rng = np.random.default_rng(cfg.get("seed"))
    params = fusion.init_fusion_params(method)
    head = nn.dense_init(method.output_dim, data_io.N_CLASSES, rng)
    params, head, history = training.train_phase2(
        method, params, head, sets, labels, _train_config(cfg), mode=mode
    )
    bundle = fusion.FusionBundle(method, params, head, mode)
    data_io.checkpoint_save(args.out_checkpoint, bundle)
    data_io.write_history(args.out_checkpoint + ".history.csv", history)
    _echo_config(
        args.out_checkpoint + ".config.txt",
        cfg.effective("train-phase2", {
            "manifest": args.manifest, "cache": args.cache,
            "out_checkpoint": args.out_checkpoint, "n_samples": len(entries),
        }),
    )
    final = history[-1]
    print(f"{method.id} [{mode}]: {len(history)} epochs, loss {final[1]:.4f}, "
          f"accuracy {final[2]*100:.1f}%")
    return 0


def cmd_evaluate(args) -> int:
    cfg = RunConfig(args)
    mode = _CLI_MODES.get(cfg.get("mode"))
    if mode is None:
        raise ConfigError(f"unknown mode {cfg.get('mode')!r} (expected audio/visual/av)")
    bundle = data_io.checkpoint_load(args.checkpoint)
    if not isinstance(bundle, fusion.FusionBundle):
        raise ConfigError(f"{args.checkpoint} is not a fusion checkpoint")
    if bundle.mode != mode:
        raise ConfigError(
            f"checkpoint was trained for mode {bundle.mode!r}; evaluating it as "
            f"{mode!r} needs a head trained for that mode"
        )
    manifest = data_io.parse_manifest(args.manifest)
    entries = _manifest_split(manifest, cfg.get("split") or "eval")
    cache = data_io.ArrayContainer.open(args.cache)
    _check_cache_tap(cache, bundle.method.tap, bundle.method.id)
    sets = _load_sets(cache, entries, bundle.method.tap)
    truths = [data_io.label_index(e.label) for e in entries]

    report = evaluation.evaluate(evaluation.predict_classes(bundle, sets), truths, mode)
    paths = evaluation.write_report(args.report_dir, report)
    _echo_config(
        os.path.join(args.report_dir, f"config_{mode}.txt"),
        cfg.effective("evaluate", {
            "manifest": args.manifest, "cache": args.cache,
            "checkpoint": args.checkpoint, "report_dir": args.report_dir,
            "n_samples": report.n_samples,
        }),
    )
    print(f"{mode}: overall accuracy {report.overall_accuracy:.2f}% "
          f"({report.n_samples} samples) -> {paths['text']}")
    return 0


# --- argument parsing ----------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value config file (flags override it)")
    p.add_argument("--seed", type=int, help="RNG seed (AVFUSE_SEED env overrides)")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--mixup-alpha", dest="mixup_alpha", type=float)
    p.add_argument("--lambda-l2", dest="lambda_l2", type=float)
    p.add_argument("--split", help="manifest split to train on (default train)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avfuse",
        description="Audio-visual scene classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute spectrograms into a cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-cache", dest="out_cache", required=True)
    p.add_argument("--features", help="comma list from mel,gam,cqt")
    p.add_argument("--workers", type=int, help="worker processes (default: cores)")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-phase1", help="train one backbone")
    p.add_argument("--model", required=True, choices=backbones.MODEL_KINDS)
    p.add_argument("--cache", help="spectrogram cache (audio models)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-checkpoint", dest="out_checkpoint", required=True)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train_phase1)

    p = sub.add_parser("export-embeddings", help="tap embeddings from 5 checkpoints")
    p.add_argument("--checkpoints", nargs=5, required=True,
                   help="five backbone checkpoints (one per model kind)")
    p.add_argument("--tap", choices=backbones.TAPS)
    p.add_argument("--cache", required=True, help="spectrogram cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-cache", dest="out_cache", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("train-phase2", help="train fusion layer + dense head")
    p.add_argument("--fusion", choices=sorted(fusion.FUSION_METHODS))
    p.add_argument("--mode", choices=sorted(_CLI_MODES))
    p.add_argument("--cache", required=True, help="embedding cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-checkpoint", dest="out_checkpoint", required=True)
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train_phase2)

    p = sub.add_parser("evaluate", help="score a fusion checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True, help="embedding cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=sorted(_CLI_MODES))
    p.add_argument("--report-dir", dest="report_dir", required=True)
    p.add_argument("--split", help="manifest split to score (default eval)")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AvfuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
