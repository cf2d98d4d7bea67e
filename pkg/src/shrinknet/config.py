"""Flat key=value run configuration.

Config files are plain text: one ``key=value`` per line, ``#`` starts a
comment, blank lines are ignored.  Lists are comma-separated; the learning
rate schedule is ``epoch:multiplier`` pairs, e.g. ``schedule=100:0.1,130:0.1``.
Unknown keys are an error (all reported at once), as are missing required
keys.  ``resolve`` returns every key with its typed value so the echoed
``config.txt`` is complete and byte-stable.
"""

from __future__ import annotations

import numpy as np

from . import data as datamod
from . import models
from .errors import ConfigError
from .optim import OptimConfig
from .penalties import KINDS, H_KINDS, MCP_FORMS, TRAINABLE_LAMBDA_KINDS, PenaltyConfig

MODELS = ("lenet300", "lenet5", "mlp", "linear")
DATASETS = ("digits", "images", "linear", "idx")

_REQUIRED = object()


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(part) for part in s.split(",") if part.strip())


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(part) for part in s.split(",") if part.strip())


def _parse_schedule(s: str) -> tuple[tuple[int, float], ...]:
    out = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        epoch, _, mult = part.partition(":")
        if not mult:
            raise ValueError(f"schedule entries look like epoch:multiplier, got {part!r}")
        out.append((int(epoch), float(mult)))
    return tuple(out)


def _parse_opt_float(s: str) -> float | None:
    return None if not s.strip() else float(s)


def _choice(options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {s!r}")
        return s
    return parse


# key -> (parser, default); _REQUIRED means the key must appear,
# None-default keys are conditionally required (checked in resolve).
SCHEMA = {
    # model
    "model": (_choice(MODELS), "lenet300"),
    "width_multiplier": (float, 1.0),
    "hidden": (_parse_int_list, (300, 100)),
    "input_dim": (int, 784),
    "output_dim": (int, 10),
    "penalize_final": (_parse_bool, True),
    # penalty
    "penalty": (_choice(KINDS), "none"),
    "xi": (float, None),
    "psi": (float, None),
    "xi_equals_psi": (_parse_bool, False),
    "gamma": (float, 2.0),
    "mcp_lam": (float, 1.0),
    "mcp_form": (_choice(MCP_FORMS), "standard"),
    "q": (float, 1.0),
    "h_kind": (_choice(H_KINDS), "inv_pow"),
    "k": (int, 2),
    # optimizer
    "lr": (float, 0.1),
    "momentum": (float, 0.9),
    "weight_decay": (float, 0.0),
    "epochs": (int, _REQUIRED),
    "batch_size": (int, 100),
    "seed": (int, 0),
    "schedule": (_parse_schedule, ()),
    "lambda_floor": (float, 1e-8),
    "lambda_momentum": (_parse_opt_float, None),
    "freeze_lambda": (_parse_bool, False),
    "snapshot_every": (int, 0),
    "shuffle": (_parse_bool, True),
    # data
    "data": (_choice(DATASETS), "digits"),
    "n_train": (int, 10_000),
    "n_test": (int, 2_000),
    "data_seed": (int, 0),
    "noise_sd": (float, 0.05),
    "corrupt_rho": (float, 0.0),
    "corrupt_seed": (int, 0),
    "max_shift": (int, 2),
    "upscale": (int, 3),
    "pad_to": (int, 28),
    "side": (int, 28),
    "num_classes": (int, 10),
    "n_features": (int, 50),
    "support_size": (int, 5),
    "coef_scale": (float, 1.0),
    "linear_noise_sd": (float, 0.5),
    "train_images": (str, ""),
    "train_labels": (str, ""),
    "test_images": (str, ""),
    "test_labels": (str, ""),
    # reporting
    "report_threshold": (float, 0.0),
    "capture_probe": (_parse_bool, False),
    "probe_samples": (int, 2048),
}


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> value strings; duplicate keys are an error."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    with open(str(path)) as f:
        return parse_kv_text(f.read(), source=str(path))


def resolve(raw: dict[str, str], overrides: dict[str, str] | None = None) -> dict:
    """Type-check raw strings against the schema and fill defaults.

    Returns a dict containing *every* schema key.  Raises ConfigError on
    unknown keys (all listed), bad values, or unmet requirements.
    """
    merged = dict(raw)
    if overrides:
        merged.update(overrides)
    unknown = sorted(k for k in merged if k not in SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    cfg: dict = {}
    for key, (parse, default) in SCHEMA.items():
        if key in merged:
            try:
                cfg[key] = parse(merged[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            cfg[key] = default

    if cfg["xi_equals_psi"]:
        if cfg["xi"] is None:
            raise ConfigError("xi_equals_psi=true needs xi")
        if cfg["psi"] is not None and cfg["psi"] != cfg["xi"]:
            raise ConfigError(
                f"xi_equals_psi=true conflicts with psi={cfg['psi']} (xi={cfg['xi']})"
            )
        cfg["psi"] = cfg["xi"]

    kind = cfg["penalty"]
    if kind != "none" and cfg["xi"] is None:
        raise ConfigError(f"penalty={kind} needs xi")
    if kind in TRAINABLE_LAMBDA_KINDS and cfg["psi"] is None:
        raise ConfigError(f"penalty={kind} needs psi (or xi_equals_psi=true)")
    if cfg["xi"] is None:
        cfg["xi"] = 0.0
    if cfg["psi"] is None:
        cfg["psi"] = 0.0

    if cfg["data"] == "idx":
        missing = [k for k in ("train_images", "train_labels") if not cfg[k]]
        if missing:
            raise ConfigError(f"data=idx needs {', '.join(missing)}")
        if bool(cfg["test_images"]) != bool(cfg["test_labels"]):
            raise ConfigError("test_images and test_labels go together")
    if cfg["model"] in ("lenet300", "lenet5") and cfg["data"] == "linear":
        raise ConfigError(f"model={cfg['model']} expects image data, not data=linear")
    if cfg["model"] == "linear" and cfg["data"] != "linear":
        raise ConfigError("model=linear expects data=linear")
    if not 0.0 <= cfg["corrupt_rho"] <= 1.0:
        raise ConfigError(f"corrupt_rho must lie in [0, 1], got {cfg['corrupt_rho']}")
    return cfg


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):  # schedule
            return ",".join(f"{e}:{_format_value(m)}" for e, m in v)
        return ",".join(_format_value(x) for x in v)
    return str(v)


def echo_text(cfg: dict) -> str:
    """Canonical sorted key=value rendering of a resolved config."""
    return "\n".join(f"{k}={_format_value(cfg[k])}" for k in sorted(cfg)) + "\n"


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_spec(cfg: dict) -> models.ModelSpec:
    name = cfg["model"]
    if name == "lenet300":
        return models.lenet300(penalize_final=cfg["penalize_final"])
    if name == "lenet5":
        return models.lenet5(cfg["width_multiplier"], penalize_final=cfg["penalize_final"])
    if name == "mlp":
        return models.mlp(cfg["input_dim"], cfg["hidden"], cfg["output_dim"],
                          penalize_final=cfg["penalize_final"])
    return models.linear(cfg["n_features"], 1)


def build_penalty(cfg: dict) -> PenaltyConfig:
    return PenaltyConfig(
        kind=cfg["penalty"],
        xi=cfg["xi"],
        psi=cfg["psi"],
        gamma=cfg["gamma"],
        mcp_lam=cfg["mcp_lam"],
        mcp_form=cfg["mcp_form"],
        q=cfg["q"],
        h_kind=cfg["h_kind"],
        k=cfg["k"],
    )


def build_optim(cfg: dict) -> OptimConfig:
    return OptimConfig(
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        schedule=cfg["schedule"],
        lambda_floor=cfg["lambda_floor"],
        lambda_momentum=cfg["lambda_momentum"],
        freeze_lambda=cfg["freeze_lambda"],
        snapshot_every=cfg["snapshot_every"],
        shuffle=cfg["shuffle"],
    )


def build_datasets(cfg: dict):
    """Resolved config -> (train_set, test_set or None)."""
    source = cfg["data"]
    if source == "digits":
        train, test = datamod.digits_datasets(
            n_train=cfg["n_train"], n_test=cfg["n_test"], seed=cfg["data_seed"],
            upscale=cfg["upscale"], pad_to=cfg["pad_to"],
            max_shift=cfg["max_shift"], noise_sd=cfg["noise_sd"],
        )
    elif source == "images":
        train = datamod.gen_class_images(
            cfg["n_train"], num_classes=cfg["num_classes"], side=cfg["side"],
            seed=cfg["data_seed"], noise_sd=cfg["noise_sd"],
            max_shift=cfg["max_shift"], split="train",
        )
        test = datamod.gen_class_images(
            cfg["n_test"], num_classes=cfg["num_classes"], side=cfg["side"],
            seed=cfg["data_seed"] + 1, noise_sd=cfg["noise_sd"],
            max_shift=cfg["max_shift"], split="test",
            template_seed=cfg["data_seed"],
        )
    elif source == "linear":
        # one draw for both splits so they share the true coefficients
        full, _, _ = datamod.gen_sparse_linear(
            cfg["n_train"] + cfg["n_test"], cfg["n_features"], cfg["support_size"],
            noise_sd=cfg["linear_noise_sd"], coef_scale=cfg["coef_scale"],
            seed=cfg["data_seed"], split="train",
        )
        nt = cfg["n_train"]
        train = datamod.Dataset(full.inputs[:nt], full.labels[:nt], split="train",
                                task="regression", provenance=full.provenance)
        test = None
        if cfg["n_test"] > 0:
            test = datamod.Dataset(full.inputs[nt:], full.labels[nt:], split="test",
                                   task="regression",
                                   provenance={**full.provenance, "split_tail": cfg["n_test"]})
    else:  # idx
        train = datamod.load_idx(cfg["train_images"], cfg["train_labels"], split="train")
        if cfg["n_train"] and cfg["n_train"] < len(train):
            train = train.subset(cfg["n_train"])
        test = None
        if cfg["test_images"]:
            test = datamod.load_idx(cfg["test_images"], cfg["test_labels"], split="test")
            if cfg["n_test"] and cfg["n_test"] < len(test):
                test = test.subset(cfg["n_test"])

    if cfg["corrupt_rho"] > 0.0:
        train = datamod.corrupt_labels(train, cfg["corrupt_rho"], seed=cfg["corrupt_seed"])
    return train, test


def probe_inputs(cfg: dict, train_set) -> np.ndarray:
    """First min(probe_samples, n_train) training inputs, file order."""
    n = min(cfg["probe_samples"], len(train_set))
    return train_set.inputs[:n]
