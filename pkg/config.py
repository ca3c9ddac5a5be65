"""
Experiment parameters: dotted defaults, a flat `key = value` file format
and the builder that turns them into an ExperimentConfig.
"""
import logging
import math
from pathlib import Path

from constants import (
    PROMPT_TEMPLATE, PROBE_STRATEGIES, SELECTION_STRATEGIES, SYNTH_TASKS,
    model_defaults, synth_keywords,
)
from laet.errors import InvalidArgument
from laet.finetune import FinetuneConfig
from laet.harness import ExperimentConfig
from laet.model import ModelConfig
from laet.probe import ProbeConfig
from laet.selection import SelectionConfig

logger = logging.getLogger(__name__)

# Every key with its default; desk-scale epochs and learning rates
DEFAULT_PARAMS = {
    'data.path': None,
    'data.synth': None,
    'data.size': 2000,
    'data.classes': 3,
    'data.noise': 0.0,
    'data.template': PROMPT_TEMPLATE,
    'data.train_fraction': 0.8,
    'data.val_fraction': 0.1,
    'data.test_fraction': 0.1,
    'model.layers': model_defaults['layers'],
    'model.dim': model_defaults['dim'],
    'model.heads': model_defaults['heads'],
    'model.context': model_defaults['context'],
    'probe.strategy': 'lt',
    'probe.epochs': 100,
    'probe.learning_rate': 0.05,
    'probe.batch_size': 32,
    'probe.independent': False,
    'probe.metric': 'f1',
    'selection.strategy': 'dominance',
    'selection.alpha': 0.5,
    'selection.beta': 0.5,
    'finetune.epochs': 8,
    'finetune.model_lr': 0.01,
    'finetune.classifier_lr': 0.05,
    'finetune.weight_decay': 1e-4,
    'finetune.batch_size': 32,
    'finetune.schedule_t0': None,
    'finetune.clip_norm': 1.0,
    'finetune.all_layers': False,
    'run.seed': 0,
    'run.out': 'runs/latest',
}


def _text(value):
    return None if value is None or str(value).lower() in ('', 'none') else str(value)


def _bool(value):
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ('true', 'yes', '1', 'on'):
        return True
    if lowered in ('false', 'no', '0', 'off'):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _int_at_least(minimum):
    def parse(value):
        number = int(value)
        if number < minimum:
            raise ValueError(f"must be at least {minimum}")
        return number
    return parse


def _float_in(low, high, open_low=False, open_high=False):
    def parse(value):
        number = float(value)
        if not math.isfinite(number):
            raise ValueError("must be a finite number")
        if number < low or (open_low and number == low) or number > high or (open_high and number == high):
            raise ValueError(f"must lie in {'(' if open_low else '['}{low}, {high}{')' if open_high else ']'}")
        return number
    return parse


def _choice(options):
    def parse(value):
        value = str(value).strip().lower()
        if value not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return value
    return parse


def _optional(parser):
    def parse(value):
        return None if _text(value) is None else parser(value)
    return parse


_positive = _float_in(0.0, float('inf'), open_low=True)
_fraction = _float_in(0.0, 1.0, open_low=True)

PARSERS = {
    'data.path': _text,
    'data.synth': _optional(_choice(SYNTH_TASKS)),
    'data.size': _int_at_least(1),
    'data.classes': _int_at_least(2),
    'data.noise': _float_in(0.0, 1.0, open_high=True),
    'data.template': str,
    'data.train_fraction': _fraction,
    'data.val_fraction': _fraction,
    'data.test_fraction': _fraction,
    'model.layers': _int_at_least(1),
    'model.dim': _int_at_least(1),
    'model.heads': _int_at_least(1),
    'model.context': _int_at_least(1),
    'probe.strategy': _choice(PROBE_STRATEGIES),
    'probe.epochs': _int_at_least(1),
    'probe.learning_rate': _positive,
    'probe.batch_size': _int_at_least(1),
    'probe.independent': _bool,
    'probe.metric': _choice(('f1', 'mcc')),
    'selection.strategy': _choice(SELECTION_STRATEGIES),
    'selection.alpha': _float_in(0.0, float('inf')),
    'selection.beta': _float_in(0.0, float('inf')),
    'finetune.epochs': _int_at_least(1),
    'finetune.model_lr': _positive,
    'finetune.classifier_lr': _positive,
    'finetune.weight_decay': _float_in(0.0, float('inf')),
    'finetune.batch_size': _int_at_least(1),
    'finetune.schedule_t0': _optional(_positive),
    'finetune.clip_norm': _float_in(0.0, float('inf')),
    'finetune.all_layers': _bool,
    'run.seed': _int_at_least(0),
    'run.out': str,
}


def update_param(params, key, value):
    """Parse and store one parameter; unknown keys and out-of-range values are rejected"""
    if key not in PARSERS:
        raise InvalidArgument(f"unknown configuration key '{key}'")
    try:
        params[key] = PARSERS[key](value)
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"invalid value {value!r} for '{key}': {exc}") from None
    return params


def parse_config_text(text):
    """`section.key = value` lines; '#' starts a comment"""
    entries = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise InvalidArgument(f"config line {line_number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split('=', 1))
        entries[key] = value
    return entries


# Function to layer defaults, then the config file, then command-line overrides
def load_params(path=None, overrides=None):
    params = dict(DEFAULT_PARAMS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise InvalidArgument(f"config file not found: {path}")
        entries = parse_config_text(path.read_text(encoding='utf-8'))
        for key, value in entries.items():
            update_param(params, key, value)
        logger.debug(f"Read {len(entries)} settings from {path}")
    # Unset CLI options leave the file value in place
    for key, value in (overrides or {}).items():
        if value is not None:
            update_param(params, key, value)
    return params


def build_experiment(params):
    """ExperimentConfig from a full parameter dict; run.seed seeds every stage"""
    if params['data.path'] is not None and not Path(params['data.path']).exists():
        raise InvalidArgument(f"dataset file not found: {params['data.path']}")
    if params['data.synth'] is not None and params['data.classes'] > len(synth_keywords):
        raise InvalidArgument(f"synthetic tasks support at most {len(synth_keywords)} classes")
    # One seed drives model init, data split, probing and fine-tuning
    seed = params['run.seed']
    strategy = params['probe.strategy']
    fractions = (params['data.train_fraction'], params['data.val_fraction'], params['data.test_fraction'])
    if sum(fractions) > 1.0 + 1e-9:
        raise InvalidArgument("split fractions sum to more than 1")
    return ExperimentConfig(
        data_path=params['data.path'],
        synth=params['data.synth'],
        size=params['data.size'],
        classes=params['data.classes'],
        noise=params['data.noise'],
        template=params['data.template'],
        fractions=fractions,
        model=ModelConfig(
            num_layers=params['model.layers'], hidden_dim=params['model.dim'],
            num_heads=params['model.heads'], max_context=params['model.context'], seed=seed,
        ).validate(),
        probe=ProbeConfig(
            epochs=params['probe.epochs'], learning_rate=params['probe.learning_rate'],
            batch_size=params['probe.batch_size'], seed=seed, strategy=strategy,
            metric=params['probe.metric'], independent=params['probe.independent'],
        ),
        selection=SelectionConfig(params['selection.alpha'], params['selection.beta'], params['selection.strategy']),
        finetune=FinetuneConfig(
            epochs=params['finetune.epochs'], model_lr=params['finetune.model_lr'],
            classifier_lr=params['finetune.classifier_lr'], weight_decay=params['finetune.weight_decay'],
            batch_size=params['finetune.batch_size'], seed=seed, schedule_t0=params['finetune.schedule_t0'],
            clip_norm=params['finetune.clip_norm'], strategy=strategy,
        ),
        all_layers=params['finetune.all_layers'],
        seed=seed,
        out=params['run.out'],
    )


def load_config(path=None, overrides=None):
    return build_experiment(load_params(path, overrides))
