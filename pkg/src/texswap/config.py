"""Flat key=value run configuration.

Every tunable across the toolkit lives in one flat namespace so any setting
is addressable from a config file line or a CLI flag. Values layer in order
default < file < cli, and each key remembers which layer set it.
"""

import difflib
import os

from .dataset import DataConfig
from .intrinsics import IntrinsicsConfig
from .models import ModelConfig
from .sampling import SamplerConfig
from .scene import GenConfig
from .training import TrainConfig

# (key, default, doc). Types are inferred from the defaults; tuples parse as
# comma-separated items of the element type.
DEFAULTS = [
    ("seed", 0, "global seed; env TEXSWAP_SEED replaces this default"),
    # dataset generation
    ("scenes", 4, "number of distinct scene layouts"),
    ("variations", 2, "material swaps rendered per scene"),
    ("res", 64, "render resolution (square)"),
    ("spp", 128, "irradiance samples per pixel"),
    ("exemplar_res", 256, "flat exemplar render resolution"),
    ("stratified", True, "stratify irradiance sampling"),
    # denoiser architecture
    ("base", 32, "UNet base channel width"),
    ("mults", (1, 2, 3), "channel multipliers per resolution level"),
    ("attn_levels", (1, 2), "levels that cross-attend to texture tokens"),
    ("tok_dim", 128, "texture token dimension"),
    ("n_tokens", 4, "texture tokens per exemplar"),
    ("enc_res", 64, "texture encoder input resolution"),
    ("tex_base", 32, "texture encoder base width"),
    # denoiser training
    ("stage_res", (32, 64), "resolution per training stage"),
    ("stage_steps", (20000, 10000), "optimizer steps per training stage"),
    ("batch", 16, "items per optimizer step"),
    ("lr", 1e-4, "AdamW learning rate; small-corpus default, large corpora favor 2e-5"),
    ("weight_decay", 0.01, "AdamW weight decay"),
    ("p_drop_all", 0.10, "joint conditioning dropout rate"),
    ("p_drop_each", 0.10, "independent per-input dropout rate"),
    ("flip_prob", 0.5, "horizontal flip augmentation rate"),
    ("ckpt_every", 500, "checkpoint interval in steps"),
    ("sched_T", 1000, "diffusion steps in the forward schedule"),
    ("sched_beta_min", 1e-4, "linear beta schedule start"),
    ("sched_beta_max", 0.02, "linear beta schedule end"),
    # sampling / swap
    ("steps", 50, "deterministic sampler steps"),
    ("gamma", 3.0, "exemplar guidance strength"),
    ("scale_u", 1.0, "exemplar crop scale along u"),
    ("scale_v", 1.0, "exemplar crop scale along v"),
    ("offset_u", 0.0, "exemplar crop offset along u"),
    ("offset_v", 0.0, "exemplar crop offset along v"),
    # intrinsic estimators
    ("intr_base", 32, "estimator UNet base width"),
    ("intr_steps", 3000, "estimator training steps"),
    ("intr_batch", 8, "estimator batch size"),
    ("intr_lr", 2e-4, "estimator learning rate"),
    ("intr_res", 64, "estimator training resolution"),
    ("intr_ckpt_every", 1000, "estimator checkpoint interval"),
    # evaluation
    ("eval_max_pairs", 0, "cap on evaluated pairs, 0 = all"),
]

_KEYS = {k: (v, doc) for k, v, doc in DEFAULTS}


class ConfigError(ValueError):
    pass


def _parse_scalar(key, text, proto):
    text = text.strip()
    try:
        if isinstance(proto, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
    except ValueError:
        raise ConfigError("key %r expects %s, got %r"
                          % (key, type(proto).__name__, text))
    return text


def parse_value(key, text):
    if key not in _KEYS:
        near = difflib.get_close_matches(key, _KEYS, n=1)
        hint = ("; nearest valid key is %r" % near[0]) if near else ""
        raise ConfigError("unknown config key %r%s" % (key, hint))
    proto = _KEYS[key][0]
    if isinstance(proto, tuple):
        elem = proto[0] if proto else 0
        items = [p for p in str(text).split(",") if p.strip()]
        return tuple(_parse_scalar(key, p, elem) for p in items)
    if isinstance(proto, str):
        return str(text).strip()
    return _parse_scalar(key, str(text), proto)


def format_value(v):
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Effective settings plus the layer each one came from."""

    def __init__(self):
        self._values = {k: v for k, (v, _) in _KEYS.items()}
        self._origin = {k: "default" for k in _KEYS}

    def __getattr__(self, key):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key)

    def get(self, key):
        if key not in self._values:
            raise ConfigError("unknown config key %r" % key)
        return self._values[key]

    def set(self, key, value, origin):
        self._values[key] = parse_value(key, format_value(value)
                                        if not isinstance(value, str) else value)
        self._origin[key] = origin

    def provenance(self, key):
        if key not in self._origin:
            raise ConfigError("unknown config key %r" % key)
        return self._origin[key]

    def dump(self, path):
        """Writes a file that load_config reads back to identical values."""
        lines = ["# effective configuration; value provenance on each line"]
        for key, _, doc in DEFAULTS:
            lines.append("%s=%s  # %s (%s)" % (key, format_value(self._values[key]),
                                               doc, self._origin[key]))
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    def as_dict(self):
        return dict(self._values)


def load_config(path=None, overrides=None):
    """defaults, then the file at path, then CLI overrides."""
    rc = RunConfig()
    env_seed = os.environ.get("TEXSWAP_SEED")
    if env_seed is not None:
        rc.set("seed", env_seed, "env")
    if path:
        with open(path, encoding="utf-8") as f:
            for ln, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("%s:%d: expected key=value, got %r"
                                      % (path, ln, raw.strip()))
                key, text = line.split("=", 1)
                rc.set(key.strip(), text, "file")
    for key, value in (overrides or {}).items():
        rc.set(key, value, "cli")
    return rc


# Bridges from the flat namespace to each module's config type.

def data_config(rc):
    return DataConfig(scenes=rc.scenes, variations=rc.variations, res=rc.res,
                      spp=rc.spp, exemplar_res=rc.exemplar_res, seed0=rc.seed,
                      stratified=rc.stratified, gen=GenConfig())


def model_config(rc):
    return ModelConfig(base=rc.base, mults=tuple(rc.mults),
                       attn_levels=tuple(rc.attn_levels), tok_dim=rc.tok_dim,
                       n_tokens=rc.n_tokens, enc_res=rc.enc_res,
                       tex_base=rc.tex_base)


def train_config(rc):
    return TrainConfig(stage_res=tuple(rc.stage_res),
                       stage_steps=tuple(rc.stage_steps), batch=rc.batch,
                       lr=rc.lr, weight_decay=rc.weight_decay,
                       p_drop_all=rc.p_drop_all, p_drop_each=rc.p_drop_each,
                       flip_prob=rc.flip_prob, seed=rc.seed,
                       ckpt_every=rc.ckpt_every, sched_T=rc.sched_T,
                       sched_beta=(rc.sched_beta_min, rc.sched_beta_max),
                       model=model_config(rc))


def sampler_config(rc):
    return SamplerConfig(steps=rc.steps, gamma=rc.gamma, seed=rc.seed)


def intrinsics_config(rc):
    return IntrinsicsConfig(base=rc.intr_base, steps=rc.intr_steps,
                            batch=rc.intr_batch, lr=rc.intr_lr,
                            res=rc.intr_res, seed=rc.seed,
                            ckpt_every=rc.intr_ckpt_every)
