"""
Command-line entry point: `python main.py [--config PATH] [--seed N] [--out DIR] <command> ...`

Exit codes: 0 success, 1 usage error, 2 pipeline failure.
"""
import json
import logging
import os
import sys
from pathlib import Path

import click

from config import load_config
from constants import PROBE_STRATEGIES, SELECTION_STRATEGIES, SYNTH_TASKS, log_levels
from laet.datakit import synth_generate, write_jsonl
from laet.errors import InvalidArgument, PipelineError
from laet import harness

logger = logging.getLogger('laet')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PIPELINE = 2


def configure_logging():
    """Root logger verbosity from LAET_LOG (error|warn|info|debug)"""
    requested = os.environ.get('LAET_LOG', 'info').strip().lower()
    level = log_levels.get(requested)
    logging.basicConfig(
        level=level or 'INFO',
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )
    if level is None:
        logger.warning(f"Unknown LAET_LOG value '{requested}', using info")


def experiment_options(command):
    """Data, probing and selection flags shared by every pipeline command"""
    options = [
        click.option('--data', 'data_path', type=click.Path(), help='JSONL dataset with instruction/text/answer.'),
        click.option('--synth', type=click.Choice(SYNTH_TASKS), help='Generate a synthetic task instead.'),
        click.option('--size', type=int, help='Synthetic dataset size.'),
        click.option('--classes', type=int, help='Synthetic class count.'),
        click.option('--noise', type=float, help='Synthetic label-noise fraction.'),
        click.option('--strategy', type=click.Choice(PROBE_STRATEGIES), help='Probing representation.'),
        click.option('--alpha', type=float, help='Margin coefficient for m1.'),
        click.option('--beta', type=float, help='Margin coefficient for m2.'),
        click.option('--selection', type=click.Choice(SELECTION_STRATEGIES), help='Layer selection rule.'),
        click.option('--all-layers', is_flag=True, help='Fine-tune every layer (baseline).'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _experiment(ctx, data_path=None, synth=None, size=None, classes=None, noise=None,
                strategy=None, alpha=None, beta=None, selection=None, all_layers=None):
    overrides = {
        'data.path': data_path, 'data.synth': synth, 'data.size': size,
        'data.classes': classes, 'data.noise': noise,
        'probe.strategy': strategy,
        'selection.alpha': alpha, 'selection.beta': beta, 'selection.strategy': selection,
        'finetune.all_layers': True if all_layers else None,
        'run.seed': ctx.obj['seed'], 'run.out': ctx.obj['out'],
    }
    return load_config(ctx.obj['config'], overrides)


def _emit(payload):
    click.echo(json.dumps(payload, sort_keys=True))


@click.group()
@click.option('--config', 'config_path', type=click.Path(), help='Flat key = value configuration file.')
@click.option('--seed', type=int, help='Seed for data, model and training.')
@click.option('--out', type=click.Path(), help='Output directory.')
@click.pass_context
def cli(ctx, config_path, seed, out):
    """Layer-wise probing, selection, selective fine-tuning and ensemble voting."""
    ctx.ensure_object(dict)
    ctx.obj.update(config=config_path, seed=seed, out=out)


@cli.command()
@experiment_options
@click.pass_context
def pipeline(ctx, **options):
    """Run every stage end to end."""
    report = harness.run_pipeline(_experiment(ctx, **options))
    _emit({'selected': report.selection['selected'], 'test': report.to_dict()['test']})


@cli.command()
@experiment_options
@click.pass_context
def probe(ctx, **options):
    """Train the shared probe and write metrics.json."""
    summary = harness.stage_probe(_experiment(ctx, **options))
    _emit({'table': summary['table']['rows']})


@cli.command()
@experiment_options
@click.pass_context
def select(ctx, **options):
    """Choose the layer set from metrics.json."""
    selection = harness.stage_select(_experiment(ctx, **options))
    _emit(selection.to_dict())


@cli.command()
@experiment_options
@click.pass_context
def finetune(ctx, **options):
    """Fine-tune the selected layers and the probe head."""
    _emit(harness.stage_finetune(_experiment(ctx, **options)))


@cli.command()
@experiment_options
@click.pass_context
def predict(ctx, **options):
    """Ensemble predictions for the test split."""
    rows = harness.stage_predict(_experiment(ctx, **options))
    _emit({'predictions': len(rows), 'ties': sum(1 for row in rows if row['tie'])})


@cli.command()
@experiment_options
@click.pass_context
def report(ctx, **options):
    """Assemble report.json from the persisted artifacts."""
    result = harness.stage_report(_experiment(ctx, **options))
    _emit({'test': result.to_dict()['test'], 'bound': result.to_dict()['bound']})


def _parse_grid(text):
    grid = []
    for cell in text.split(','):
        try:
            alpha, beta = (float(part) for part in cell.split(':'))
        except ValueError:
            raise click.BadParameter(f"expected alpha:beta pairs, got '{cell}'", param_hint='--grid')
        grid.append((alpha, beta))
    return grid


@cli.command()
@experiment_options
@click.option('--grid', default='0.3:0.3,0.5:0.5,0.7:0.7', show_default=True,
              help='Comma-separated alpha:beta cells.')
@click.pass_context
def sweep(ctx, grid, **options):
    """Alpha/beta sweep sharing one probing phase; writes sweep.csv."""
    for row in harness.sweep_alpha_beta(_experiment(ctx, **options), _parse_grid(grid)):
        _emit(row)


@cli.command()
@experiment_options
@click.pass_context
def strategies(ctx, **options):
    """Probe with LT, SaT and AvT; writes strategies.csv."""
    rows = harness.compare_probe_strategies(_experiment(ctx, **options))
    _emit({'mean_m1': harness.mean_by_strategy(rows)})


@cli.command()
@click.option('--synth', 'kind', type=click.Choice(SYNTH_TASKS), default='keyword', show_default=True)
@click.option('--size', type=int, default=2000, show_default=True)
@click.option('--classes', type=int, default=3, show_default=True)
@click.option('--noise', type=float, default=0.0, show_default=True)
@click.option('--output', type=click.Path(), help='Target JSONL (default: <out>/<task>.jsonl).')
@click.pass_context
def synth(ctx, kind, size, classes, noise, output):
    """Write a seeded synthetic dataset as JSONL."""
    seed = ctx.obj['seed'] or 0
    target = Path(output) if output else Path(ctx.obj['out'] or '.') / f"{kind}.jsonl"
    records = synth_generate(kind, size, classes, noise, seed)
    write_jsonl(records, target)
    _emit({'path': str(target), 'records': len(records)})


def run(argv=None):
    configure_logging()
    try:
        result = cli.main(args=argv, prog_name='laet', standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except InvalidArgument as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_USAGE
    except PipelineError as exc:
        logger.error(f"Pipeline failed in stage '{exc.stage}': {exc.cause}")
        return EXIT_PIPELINE
    return result if isinstance(result, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(run())
