"""
End-to-end comparison of the normalization strategies on synthetic data.

Trains one model per strategy and collects Dice (training and evaluation statistics), train/eval disparity and
tile mismatch into one table with a column per strategy.
"""
import logging
from os.path import join
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
from .layers import Mode, NormKind
from .infer import NormalizeSpec, NormalizeStrategy
from .unet import ModelConfig, build
from .train import TrainConfig, train
from .synthdata import SynthSpec, CLASS_NAMES, generate, save_sample
from .diagnose import ProbeGeometry, dice_eval, train_eval_disparity, tile_mismatch, halo_for, probe_geometry_for, \
    merge_mismatch
from ..io.checkpoint import save_checkpoint
from ..io.report import write_table
from ..utils import write_message

TABLE_FILE = 'repro_table.csv'

STRATEGIES = (
    ('batchnorm', NormKind.BATCH_NORM, NormalizeStrategy.GLOBAL),
    ('batchnorm_tilenorm', NormKind.BATCH_NORM, NormalizeStrategy.TILE_WISE),
    ('instancenorm', NormKind.INSTANCE_NORM, NormalizeStrategy.GLOBAL),
    ('batchrenorm', NormKind.BATCH_RENORM, NormalizeStrategy.GLOBAL),
    ('identity', NormKind.IDENTITY, NormalizeStrategy.GLOBAL),
)


@dataclass
class ReproSettings:
    features: Tuple[int, ...] = (8, 16, 32)
    levels: int = 2
    blocks: int = 2
    steps: int = 300
    accum_steps: int = 8
    tile: int = 32
    predict_tile: int = 64
    synth: SynthSpec = field(default_factory=SynthSpec)
    probe: Optional[ProbeGeometry] = None
    train_volumes: int = 2
    validation_volumes: int = 1
    renorm_warmup_steps: int = 100
    renorm_ramp_steps: int = 100
    seed: int = 0
    workers: int = 1
    strategies: Tuple[str, ...] = tuple(name for name, _, _ in STRATEGIES)


@dataclass
class ReproTable:
    columns: List[str]
    rows: List[Tuple[str, list]] = field(default_factory=list)

    @property
    def header(self):
        return ['metric'] + list(self.columns)

    def as_rows(self):
        return [[metric] + list(cells) for metric, cells in self.rows]

    def cell(self, metric, column):
        for name, cells in self.rows:
            if name == metric:
                return cells[self.columns.index(column)]
        raise KeyError(metric)


def _volumes(settings, out_dir, count, offset, prefix):
    samples = []
    for index in range(count):
        spec = SynthSpec(**dict(settings.synth.to_dict(), seed=settings.seed + offset + index))
        image, labels = generate(spec)
        save_sample(join(out_dir, 'data', '{0}{1}'.format(prefix, index)), image, labels, spec)
        samples.append((image, labels))
    return samples


def evaluate_strategy(model, validation, spec, settings):
    """
    Metrics of one trained model, keyed by row name
    """
    halo = halo_for(model)
    tile = settings.predict_tile
    metrics = {}
    for mode in (Mode.TRAIN, Mode.EVAL):
        report = dice_eval(model, validation, tile, halo, spec, mode=mode, workers=settings.workers,
                           class_names=CLASS_NAMES)
        for name, value in zip(CLASS_NAMES, report.per_class_median):
            metrics['dice-{0}/{1}'.format(mode.value, name)] = value
    metrics['disparity'] = train_eval_disparity(model, [volume for volume, _ in validation], tile, halo, spec,
                                                workers=settings.workers).median
    geometry = settings.probe or probe_geometry_for(halo, model.alignment)
    mismatch = merge_mismatch([tile_mismatch(model, volume, geometry, halo, spec=spec, workers=settings.workers)
                               for volume, _ in validation])
    metrics['max_dist'] = mismatch.max_dist
    for name, cell in zip(CLASS_NAMES, mismatch.mismatch_cells()):
        metrics['mismatch/{0}'.format(name)] = cell
    return metrics


def reproduce(out_dir, settings=None):
    settings = settings or ReproSettings()
    training = _volumes(settings, out_dir, settings.train_volumes, 0, 'train')
    validation = _volumes(settings, out_dir, settings.validation_volumes, settings.train_volumes, 'validation')
    selected = [entry for entry in STRATEGIES if entry[0] in settings.strategies]
    table = ReproTable(columns=[name for name, _, _ in selected])
    results = []
    for name, kind, strategy in selected:
        write_message('Training {0}'.format(name), level=logging.INFO)
        spec = NormalizeSpec(strategy=strategy)
        model = build(ModelConfig(features_per_level=settings.features, levels=settings.levels,
                                  blocks_per_level=settings.blocks, norm_kind=kind, seed=settings.seed))
        config = TrainConfig(steps=settings.steps, accum_steps=settings.accum_steps, tile_size=settings.tile,
                             renorm_warmup_steps=settings.renorm_warmup_steps,
                             renorm_ramp_steps=settings.renorm_ramp_steps, seed=settings.seed,
                             input_normalization=spec)
        train(model, training, config)
        save_checkpoint(model, join(out_dir, 'models', name))
        results.append(evaluate_strategy(model, validation, spec, settings))
    for metric in results[0] if results else []:
        table.rows.append((metric, [result[metric] for result in results]))
    write_table(join(out_dir, TABLE_FILE), table.header, table.as_rows())
    return table
