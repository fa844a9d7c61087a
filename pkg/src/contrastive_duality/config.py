"""YAML training configs: parsing, validation and sweep expansion.

Schema (``train.loss``, ``train.batch_size`` and ``train.epochs`` are
required, as is ``train.base_lr`` unless ``train.tuned`` supplies it;
everything else has a default)::

    dataset: {n_samples, input_dim, n_classes, radius, sigma_class, test_fraction, seed}
    model: {hidden: [64], rep_dim: 16, projector: d-d-d, emb_dim: 32, batchnorm: true}
    augmentation: {noise_std, scale_lo, scale_hi, dropout}
    train:
      loss: vicreg            # or a tuned method name when ``tuned: true``
      tuned: false            # start from the tuned preset for each loss
      params: {tau, lambda_inv, mu_var, nu_cov, lambda_bt, alpha}
      negatives: single       # or two-branch
      normalization: none
      batch_size: 256
      epochs: 30
      base_lr: 0.1
      warmup_epochs: 2
      weight_decay: 1.0e-4
      momentum: 0.9
      seed: 0
      online_probe: true
      probe_lr: 0.05
    sweep: {loss: [...], emb_dim: [...], projector: [...], seed: [...], normalization: [...]}
    export: {n: 512}

Every sweep axis multiplies the grid; one run directory per entry.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields, replace

import yaml

from .criteria import LOSS_IDS
from .errors import ConfigError, UnknownLoss
from .gradients import spec_for
from .normalization import SCHEMES
from .trainer.data import AugmentationConfig, DatasetSpec
from .trainer.model import ModelSpec
from .trainer.presets import HIDDEN, REP_DIM, TUNED, tuned_lr
from .trainer.train import TrainConfig

REQUIRED_TRAIN = ("loss", "batch_size", "epochs")
SWEEP_AXES = ("loss", "emb_dim", "projector", "seed", "normalization")
LOSS_PARAMS = ("tau", "lambda_inv", "mu_var", "nu_cov", "lambda_bt", "alpha")
TRAIN_SCALARS = ("normalization", "batch_size", "epochs", "base_lr", "warmup_epochs", "weight_decay",
                 "momentum", "seed", "online_probe", "probe_lr", "tcr_invariance")


class _Located(dict):
    """Mapping that remembers the source line of each key."""

    def __init__(self, items, lines, line):
        super().__init__(items)
        self.lines = lines
        self.line = line


def _construct(node):
    if isinstance(node, yaml.MappingNode):
        items, lines = {}, {}
        for k, v in node.value:
            key = k.value
            if key in items:
                raise ConfigError(f"duplicate key {key!r}", field=key, line=k.start_mark.line + 1)
            items[key] = _construct(v)
            lines[key] = k.start_mark.line + 1
        return _Located(items, lines, node.start_mark.line + 1)
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v) for v in node.value]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def load_yaml(text: str) -> _Located:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", line=None if mark is None else mark.line + 1) from exc
    if root is None:
        raise ConfigError("config is empty", field="train")
    data = _construct(root)
    if not isinstance(data, _Located):
        raise ConfigError("config must be a mapping at the top level", line=1)
    return data


def _section(data: _Located, name: str) -> _Located:
    sec = data.get(name)
    if sec is None:
        return _Located({}, {}, data.line)
    if not isinstance(sec, _Located):
        raise ConfigError(f"section {name!r} must be a mapping", field=name, line=data.lines.get(name))
    return sec


def _check_keys(sec: _Located, allowed, prefix: str):
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"unknown field {prefix}.{k}", field=f"{prefix}.{k}", line=sec.lines.get(k))


def _typed(sec: _Located, key: str, kind, prefix: str):
    v = sec[key]
    ok = isinstance(v, kind) and not (kind in (int, float, (int, float)) and isinstance(v, bool))
    if not ok:
        name = getattr(kind, "__name__", "number")
        raise ConfigError(f"{prefix}.{key} must be {name}, got {v!r}", field=f"{prefix}.{key}", line=sec.lines.get(key))
    return v


@dataclass(frozen=True)
class RunEntry:
    """One fully resolved run of a sweep."""

    name: str
    dataset: DatasetSpec
    model: ModelSpec
    train: TrainConfig
    n_export: int


def _build(cls, sec: _Located, prefix: str):
    """Instantiate a flat dataclass, type-checking against its defaults."""
    default = cls()
    _check_keys(sec, {f.name for f in fields(cls)}, prefix)
    kw = {}
    for k in sec:
        expected = type(getattr(default, k))
        kw[k] = _typed(sec, k, (int, float) if expected is float else expected, prefix)
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{prefix}: {exc}", field=prefix, line=sec.line) from exc


def parse_config(text: str) -> list[RunEntry]:
    """Parse and expand a YAML config into run entries.

    Raises:
        ConfigError: naming the offending field and, when known, its line.
    """
    data = load_yaml(text)
    _check_keys(data, ("dataset", "model", "augmentation", "train", "sweep", "export"), "config")
    if "train" not in data:
        raise ConfigError("missing required field 'train'", field="train", line=data.line)

    dataset = _build(DatasetSpec, _section(data, "dataset"), "dataset")
    aug = _build(AugmentationConfig, _section(data, "augmentation"), "augmentation")

    msec = _section(data, "model")
    _check_keys(msec, ("hidden", "rep_dim", "projector", "emb_dim", "batchnorm", "representation_batchnorm"), "model")
    model_base = {
        "hidden": tuple(msec.get("hidden", HIDDEN)),
        "rep_dim": msec.get("rep_dim", REP_DIM),
        "projector": msec.get("projector", "d-d-d"),
        "emb_dim": msec.get("emb_dim", 32),
        "batchnorm": msec.get("batchnorm", True),
        "representation_batchnorm": msec.get("representation_batchnorm", False),
    }

    tsec = _section(data, "train")
    _check_keys(tsec, (*TRAIN_SCALARS, "loss", "tuned", "params", "negatives"), "train")
    ssec = _section(data, "sweep")
    _check_keys(ssec, SWEEP_AXES, "sweep")
    for field_ in REQUIRED_TRAIN:
        if field_ not in tsec and field_ not in ssec:
            raise ConfigError(f"missing required field 'train.{field_}'", field=f"train.{field_}",
                              line=data.lines.get("train"))
    psec = _section(tsec, "params")
    _check_keys(psec, LOSS_PARAMS, "train.params")
    for k in psec:
        _typed(psec, k, (int, float), "train.params")
    for k in ("batch_size", "epochs", "warmup_epochs", "seed"):
        if k in tsec:
            _typed(tsec, k, int, "train")
    for k in ("base_lr", "weight_decay", "momentum", "probe_lr", "tcr_invariance"):
        if k in tsec:
            _typed(tsec, k, (int, float), "train")
    if "normalization" in tsec and tsec["normalization"] not in SCHEMES:
        raise ConfigError(f"unknown normalization {tsec['normalization']!r}; known: {', '.join(SCHEMES)}",
                          field="train.normalization", line=tsec.lines.get("normalization"))
    tuned = bool(tsec.get("tuned", False))

    axes = {}
    for axis in SWEEP_AXES:
        if axis in ssec:
            vals = ssec[axis]
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"sweep.{axis} must be a non-empty list", field=f"sweep.{axis}", line=ssec.lines.get(axis))
            axes[axis] = vals
    base_vals = {
        "loss": tsec.get("loss"),
        "emb_dim": model_base["emb_dim"],
        "projector": model_base["projector"],
        "seed": tsec.get("seed", 0),
        "normalization": tsec.get("normalization"),
    }
    grid = [axes.get(a, [base_vals[a]]) for a in SWEEP_AXES]

    entries = []
    for combo in itertools.product(*grid):
        v = dict(zip(SWEEP_AXES, combo))
        line = ssec.lines.get("loss") if "loss" in axes else tsec.lines.get("loss")
        method = v["loss"]
        if not isinstance(method, str):
            raise ConfigError(f"loss must be a string, got {method!r}", field="train.loss", line=line)
        if tuned and method in TUNED:
            loss_id, params, norm, _ = TUNED[method]
            params = {**params, **psec}
            lr = tuned_lr(method, v["emb_dim"])
        else:
            if method not in LOSS_IDS:
                raise ConfigError(f"unknown loss id {method!r}; known: {', '.join(LOSS_IDS)}", field="train.loss", line=line)
            loss_id, params, norm, lr = method, dict(psec), "none", None
        try:
            spec = spec_for(loss_id, negatives=tsec.get("negatives", "single"), **params)
        except (ValueError, TypeError, UnknownLoss) as exc:
            raise ConfigError(f"train.params: {exc}", field="train.params", line=tsec.lines.get("params")) from exc
        kw = {k: tsec[k] for k in TRAIN_SCALARS if k in tsec}
        kw["seed"] = v["seed"]
        kw["normalization"] = v["normalization"] or tsec.get("normalization", norm)
        if kw["normalization"] not in SCHEMES:
            raise ConfigError(f"unknown normalization {kw['normalization']!r}", field="sweep.normalization",
                              line=ssec.lines.get("normalization"))
        if "base_lr" not in kw:
            if lr is None:
                raise ConfigError("missing required field 'train.base_lr'", field="train.base_lr",
                                  line=data.lines.get("train"))
            kw["base_lr"] = lr
        try:
            cfg = TrainConfig(loss=spec, augmentation=aug, **kw)
            model = ModelSpec.from_projector(dataset.input_dim, model_base["hidden"], model_base["rep_dim"],
                                             v["projector"], v["emb_dim"])
            model = replace(model, batchnorm=model_base["batchnorm"],
                            representation_batchnorm=model_base["representation_batchnorm"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), field="train", line=tsec.line) from exc
        name = f"{method}-{cfg.normalization}-{v['projector']}-M{v['emb_dim']}-s{v['seed']}"
        n_export = _section(data, "export").get("n", 512)
        entries.append(RunEntry(name, dataset, model, cfg, int(n_export)))
    return entries
