"""Flat ``section.key = value`` experiment configs.

Blank lines and ``#`` comments are ignored.  Unknown keys, bad values and
duplicate keys are reported with their line number.  Example::

    dataset.generator = bandit
    priority.kind = advantage
    priority.iterations = 5
    fit.steps = 500
    seeds = 0-9
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from odpr.algos import WIRINGS, TrainConfig
from odpr.envs import GaussianBandit
from odpr.priority import KINDS, OdprConfig
from odpr.value import FitConfig


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _bool(text):
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.lower() in ("none", "off") else float(text)


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _words(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


def _words_of(options):
    def parse(text):
        words = _words(text)
        bad = [w for w in words if w not in options]
        if bad or not words:
            raise ValueError(f"expected a list from {sorted(options)}, got {text!r}")
        return words
    return parse


def parse_seeds(text):
    """``"0,3,5"`` or ``"0-9"`` or a mix."""
    out = []
    for part in _words(text):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty seed list")
    return tuple(out)


SCHEMA = {
    "experiment.name": str,
    "dataset.generator": _choice("bandit", "concat"),
    "dataset.path": Path,
    "dataset.per_mode": int,
    "dataset.keep_fraction": float,
    "bandit.reward_means": _floats,
    "bandit.reward_std": float,
    "bandit.action_std": _floats,
    "priority.kind": _choice(*KINDS),
    "priority.iterations": int,
    "priority.sigma": _opt_float,
    "priority.p_base": float,
    "priority.clip_below_one": _bool,
    "priority.top_fraction": float,
    "priority.weights": Path,
    "fit.gamma": float,
    "fit.steps": int,
    "fit.batch_size": int,
    "fit.learning_rate": float,
    "fit.use_double_heads": _bool,
    "fit.hidden_sizes": _ints,
    "fit.activation": _choice("tanh", "relu"),
    "fit.target_update_period": int,
    "fit.solver": _choice("sgd", "exact"),
    "train.algos": _words_of({"bc", "td3bc"}),
    "train.wirings": _words_of(set(WIRINGS)),
    "train.steps": int,
    "train.batch_size": int,
    "train.actor_lr": float,
    "train.critic_lr": float,
    "train.alpha": float,
    "train.policy_delay": int,
    "train.target_update_period": int,
    "train.hidden_sizes": _ints,
    "train.log_every": int,
    "tabular.mdp": _choice("random", "concat"),
    "tabular.trials": int,
    "tabular.n_states": _ints,
    "tabular.n_actions": _ints,
    "tabular.epsilon": float,
    "tabular.iterations": int,
    "output.dir": Path,
    "seeds": parse_seeds,
}

PATH_KEYS = ("dataset.path", "priority.weights")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: Path | None = None

    def get(self, key, default=None):
        return self.values.get(key, default)

    def has_section(self, section):
        return any(k.startswith(section + ".") for k in self.values)

    def _section(self, section):
        prefix = section + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    @property
    def seeds(self):
        return self.values.get("seeds", (0,))

    def bandit(self):
        kw = self._section("bandit")
        return GaussianBandit(**kw)

    def odpr(self):
        kw = self._section("priority")
        kw.pop("weights", None)
        return OdprConfig(**kw)

    def fit(self, seed=0):
        kw = self._section("fit")
        return FitConfig(seed=seed, **kw)

    def train(self, seed=0):
        kw = self._section("train")
        for k in ("algos", "wirings", "alpha"):
            kw.pop(k, None)
        return TrainConfig(seed=seed, **kw)


def parse_config(text, source=None, check_paths=True) -> ExperimentConfig:
    values, lines = {}, {}
    base = Path(source).parent if source is not None else Path.cwd()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", n)
        try:
            parsed = SCHEMA[key](value)
        except ValueError as err:
            raise ConfigError(f"bad value for {key}: {err}", n) from None
        if isinstance(parsed, Path) and not parsed.is_absolute():
            parsed = base / parsed
        if check_paths and key in PATH_KEYS and not parsed.exists():
            raise ConfigError(f"{key}: no such file {str(parsed)!r}", n)
        values[key] = parsed
        lines[key] = n
    if "dataset.path" in values and "dataset.generator" in values:
        raise ConfigError("set either dataset.path or dataset.generator, not both", lines["dataset.path"])
    cfg = ExperimentConfig(values, Path(source) if source else None)
    # surface dataclass validation errors as config errors
    for section, build in (("priority", cfg.odpr), ("fit", cfg.fit), ("train", cfg.train), ("bandit", cfg.bandit)):
        if cfg.has_section(section):
            try:
                build()
            except (TypeError, ValueError) as err:
                first = min(v for k, v in lines.items() if k.startswith(section + "."))
                raise ConfigError(f"invalid {section} section: {err}", first) from None
    return cfg


def load_config(path, check_paths=True) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), path, check_paths)
