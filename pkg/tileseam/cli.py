from tileseam import __version__ as __VERSION__
__doc__ = """
tileseam

Usage:
  tileseam gen --out=<DIR> [--seed=<SEED> --shape=<SHAPE> --blobs=<COUNT> --radius=<RADIUS> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam train <data>... --out=<DIR> [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --steps=<STEPS> --accum=<ACCUM> --tile=<TILE> --lr=<LR> --warmup=<WARMUP> --ramp=<RAMP> --input-norm=<STRATEGY> --checkpoint-every=<STEPS> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam predict <volume> --out=<FILE> [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --tile=<TILE> --halo=<HALO> --input-norm=<STRATEGY> --mode=<MODE> --workers=<WORKERS> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam diagnose-rf --out=<DIR> [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --tile=<TILE> --samples=<SAMPLES> --mode=<MODE> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam diagnose-mismatch <data>... [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --halo=<HALO> --probe=<PROBE> --split-offset=<OFFSET> --stride=<STRIDE> --input-norm=<STRATEGY> --threshold=<THRESHOLD> --workers=<WORKERS> --out=<FILE> --format=<FORMAT> --assert-seamless --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam diagnose-disparity <data>... [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --tile=<TILE> --halo=<HALO> --input-norm=<STRATEGY> --threshold=<THRESHOLD> --workers=<WORKERS> --out=<FILE> --format=<FORMAT> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam diagnose-sweep <data>... [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --tiles=<TILES> --halo=<HALO> --input-norm=<STRATEGY> --threshold=<THRESHOLD> --workers=<WORKERS> --out=<FILE> --format=<FORMAT> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam eval <data>... [--checkpoint=<DIR> --norm=<KIND> --features=<FEATURES> --levels=<LEVELS> --blocks=<BLOCKS> --seed=<SEED> --tile=<TILE> --halo=<HALO> --input-norm=<STRATEGY> --mode=<MODE> --threshold=<THRESHOLD> --workers=<WORKERS> --out=<FILE> --format=<FORMAT> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam report <report>... [--out=<FILE> --verbosity=<VERBOSITY>]
  tileseam repro --out=<DIR> [--features=<FEATURES> --seed=<SEED> --steps=<STEPS> --accum=<ACCUM> --workers=<WORKERS> --config=<FILE> --verbosity=<VERBOSITY>]
  tileseam --help
  tileseam --version

<data>                   Sample directories as written by "gen" (image.npy, labels.npy, spec.json)
<volume>                 A sample directory or a single .npy volume of shape [D, H, W] or [C, D, H, W]
<report>                 JSON reports written by the diagnose-* and eval commands

Options:
  --out=<PATH>                     Output directory (gen, train, diagnose-rf, repro) or output file. The diagnose-*
                                   and eval commands print their report when it is omitted
  --config=<FILE>                  JSON object with option names as keys (e.g. {"steps": 100, "norm": "batchrenorm"}).
                                   Options given on the command line override the file
  --checkpoint=<DIR>               Load the model from a checkpoint directory instead of building a fresh one
  --norm=<KIND>                    Normalization of a freshly built model: batchnorm, instancenorm,
                                   instancenorm_tracked, batchrenorm or identity. Defaults to batchnorm
  --features=<FEATURES>            Comma separated feature counts, one per level plus the bottleneck. Defaults to
                                   8,16,32
  --levels=<LEVELS>                Number of pooling levels. Defaults to 2
  --blocks=<BLOCKS>                Convolution blocks per level. Defaults to 2
  --seed=<SEED>                    Seed of the data generator, the weight initialization and the tile sampler.
                                   Defaults to 0
  --shape=<SHAPE>                  Volume shape of generated samples, one value or three comma separated values, each a
                                   multiple of 4. Defaults to 64,64,128
  --blobs=<COUNT>                  Blob count range of generated samples, "min,max" or a single value. Defaults to 30,60
  --radius=<RADIUS>                Blob radius range of generated samples, "min,max" or a single value. Defaults to 4,8
  --steps=<STEPS>                  Optimizer steps. Defaults to 300
  --accum=<ACCUM>                  Micro-batches accumulated per optimizer step. Defaults to 8
  --tile=<TILE>                    Tile size, one value or three comma separated values. Tiles larger than the volume
                                   are shrunk to it. Defaults to 32 for training, 48 for the receptive field probe
                                   and to the smallest tile keeping a core of 16 voxels inside the halo (at least 32)
                                   for prediction
  --tiles=<TILES>                  Comma separated edge lengths of the cubic tiles compared by diagnose-sweep.
                                   Defaults to the tiles keeping cores of 16, 32 and 48 voxels inside the halo
  --lr=<LR>                        Adam learning rate. Defaults to 0.001
  --warmup=<WARMUP>                Steps of plain batch normalization before batch renormalization switches on, or
                                   "never". Defaults to 100
  --ramp=<RAMP>                    Steps over which the renormalization clip bounds open up. Defaults to 1000
  --input-norm=<STRATEGY>          Quantile normalization of the input: "global" (whole image) or "tile_wise" (each
                                   tile). Defaults to global
  --checkpoint-every=<STEPS>       Write an intermediate checkpoint every STEPS optimizer steps. Defaults to 0 (never)
  --halo=<HALO>                    Context voxels discarded at every tile edge, or "trf" for the theoretical receptive
                                   field radius of the architecture with global statistics. Defaults to trf
  --mode=<MODE>                    Normalization statistics used for prediction: "train" or "eval". Defaults to eval
  --workers=<WORKERS>              Tiles predicted concurrently. Results do not depend on it. Defaults to 1
  --samples=<SAMPLES>              Random tiles averaged for the effective receptive field. Defaults to 8
  --probe=<PROBE>                  Probe region of the mismatch test. The last axis is split into two overlapping
                                   tiles. Defaults to the smallest region that fits the halo
  --split-offset=<OFFSET>          Shift of the second probe tile along the last axis. Defaults to 16
  --stride=<STRIDE>                Distance between probe positions. Defaults to 16
  --threshold=<THRESHOLD>          Threshold for binarizing predictions. Defaults to 0.5
  --format=<FORMAT>                Report format, "json" or "csv". Defaults to json
  --assert-seamless                Exit with status 3 if any probed tile pair differs
  --verbosity=<VERBOSITY>          0 warnings only, 1 progress, 2 debug output. Defaults to 0
  --version                        Displays the version of tileseam

"""
import sys
import json
import logging
from os import makedirs
from os.path import join, isdir
from docopt import docopt, DocoptExit
from termcolor import colored
from tileseam.core.errors import ConfigError, DataFormatError, ShapeError, SynthesisError, TrainingDivergedError, \
    NonFiniteError
from tileseam.core.layers import Mode, NormKind
from tileseam.core.unet import ModelConfig, build
from tileseam.core.infer import NormalizeSpec, NormalizeStrategy, predict_sliding, tile_for_halo
from tileseam.core.train import TrainConfig, train
from tileseam.core.synthdata import SynthSpec, CLASS_NAMES, generate, save_sample, load_sample
from tileseam.core.diagnose import ProbeGeometry, halo_for, probe_geometry_for, probe_receptive_field, \
    tile_mismatch, merge_mismatch, train_eval_disparity, dice_eval, tile_size_sweep, SweepReport
from tileseam.core.repro import ReproSettings, TABLE_FILE, reproduce
from tileseam.core.tensor import SplitMix64
from tileseam.io import read_npy, write_npy
from tileseam.io.checkpoint import save_checkpoint, load_checkpoint
from tileseam.io.report import write_report, load_report, report_rows, write_table, write_training_log, write_pgm
from tileseam.utils import write_message, configure_logging
from tileseam.utils.optionparser import parse_options, merge_config, InvalidOption, HALO_FROM_RECEPTIVE_FIELD

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_SEAMLESS = 3

DEFAULT_FEATURES = (8, 16, 32)
DEFAULT_TRAIN_TILE = (32, 32, 32)
DEFAULT_RF_TILE = (48, 48, 48)
DEFAULT_ERF_SAMPLES = 8
SWEEP_CORES = (16, 32, 48)
TRAINING_LOG = 'training_log.csv'
SYNTH_FIELDS = (('shape', 'shape'), ('seed', 'seed'), ('blobs', 'blob_count'), ('radius', 'blob_radius'))

COMMANDS = ('gen', 'train', 'predict', 'diagnose-rf', 'diagnose-mismatch', 'diagnose-disparity', 'diagnose-sweep',
            'eval', 'report', 'repro')


def main():
    sys.exit(run())


def run(argv=None):
    """
    Runs one command and returns its exit status: 0 on success, 1 for usage errors, 2 for data and format
    errors and 3 when ``--assert-seamless`` finds a tile mismatch
    """
    try:
        arguments = docopt(__doc__, argv=argv, version=__VERSION__)
    except DocoptExit as exc:
        write_message(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return EXIT_OK if exc.code is None else exc.code
    try:
        options = parse_options(merge_config(arguments))
        configure_logging(options.get('verbosity', 0))
        command = next(name for name in COMMANDS if options.get(name))
        return HANDLERS[command](options) or EXIT_OK
    except (InvalidOption, ConfigError) as exc:
        write_message(str(exc))
        return EXIT_USAGE
    except (DataFormatError, ShapeError, SynthesisError, TrainingDivergedError, NonFiniteError, OSError) as exc:
        write_message('{0}: {1}'.format(type(exc).__name__, exc))
        return EXIT_DATA


def print_result(name, value):
    print(colored('{0}={1}'.format(name, value), color='magenta'))


def model_from_options(options):
    if options.get('checkpoint'):
        model = load_checkpoint(options['checkpoint'])
        if options.get('norm') not in (None, model.config.norm_kind):
            raise ConfigError('Checkpoint {0} uses {1}, not {2}'.format(options['checkpoint'],
                                                                        model.config.norm_kind.value,
                                                                        options['norm'].value))
        return model
    config = ModelConfig(features_per_level=options.get('features', DEFAULT_FEATURES),
                         levels=options.get('levels', 2),
                         blocks_per_level=options.get('blocks', 2),
                         norm_kind=options.get('norm', NormKind.BATCH_NORM),
                         seed=options.get('seed', 0))
    return build(config)


def normalize_spec(options):
    return NormalizeSpec(strategy=options.get('input_norm', NormalizeStrategy.GLOBAL))


def halo_from_options(options, model):
    halo = options.get('halo', HALO_FROM_RECEPTIVE_FIELD)
    if halo == HALO_FROM_RECEPTIVE_FIELD:
        return halo_for(model)
    if len(set(halo)) != 1:
        raise ConfigError('The halo must be the same along every axis, got {0}'.format(halo))
    return halo[0]


def geometry_from_options(options, model):
    """
    Prediction tile and halo. Without ``--tile`` the tile is sized to keep a core inside the halo.
    """
    halo = halo_from_options(options, model)
    return options.get('tile', tile_for_halo(halo, model.alignment)), halo


def sweep_tiles(options, model, halo):
    if 'tiles' in options:
        return options['tiles']
    return tuple(tile_for_halo(halo, model.alignment, core=core) for core in SWEEP_CORES)



def load_samples(directories, labelled=True):
    samples = []
    for directory in directories:
        image, labels = load_sample(directory)
        if labelled and labels is None:
            raise DataFormatError('{0} has no labels'.format(directory))
        samples.append((image, labels))
    return samples


def load_volume(path):
    if isdir(path):
        return load_sample(path)[0]
    volume = read_npy(path)
    if volume.ndim == 3:
        volume = volume[None]
    if volume.ndim != 4:
        raise ShapeError('{0}: expected a [D, H, W] or [C, D, H, W] volume, got shape {1}'.format(path,
                                                                                           volume.shape))
    return volume


def emit_report(report, options):
    if options.get('out'):
        write_report(report, options['out'], options.get('format', 'json'))
        write_message('Report written to {0}'.format(options['out']), level=logging.INFO)
    for metric, value in report_rows(report):
        print_result(metric, value)


def command_gen(options):
    spec = SynthSpec(**{field: options[name] for name, field in SYNTH_FIELDS if name in options})
    image, labels = generate(spec)
    save_sample(options['out'], image, labels, spec)
    print_result('sample', options['out'])


def command_train(options):
    model = model_from_options(options)
    config = TrainConfig(lr=options.get('lr', 1e-3), steps=options.get('steps', 300),
                         accum_steps=options.get('accum', 8), tile_size=options.get('tile', DEFAULT_TRAIN_TILE),
                         renorm_warmup_steps=options.get('warmup', 100), renorm_ramp_steps=options.get('ramp', 1000),
                         seed=options.get('seed', 0), input_normalization=normalize_spec(options),
                         checkpoint_every=options.get('checkpoint_every', 0), checkpoint_dir=options['out'])
    model, log = train(model, load_samples(options['data']), config)
    save_checkpoint(model, options['out'])
    write_training_log(log, join(options['out'], TRAINING_LOG))
    print_result('final_loss', log.records[-1].loss)
    print_result('smoothed_loss', log.smoothed_losses()[-1])
    print_result('checkpoint', options['out'])


def command_predict(options):
    model = model_from_options(options)
    tile, halo = geometry_from_options(options, model)
    prediction = predict_sliding(model, load_volume(options['volume']), normalize_spec(options), tile, halo,
                                 mode=options.get('mode', Mode.EVAL), workers=options.get('workers', 1))
    write_npy(options['out'], prediction)
    print_result('prediction', options['out'])


def command_diagnose_rf(options):
    model = model_from_options(options)
    tile = options.get('tile', DEFAULT_RF_TILE)
    report = probe_receptive_field(model, tile, options.get('samples', DEFAULT_ERF_SAMPLES),
                                   SplitMix64(options.get('seed', 0)), options.get('mode', Mode.EVAL))
    makedirs(options['out'], exist_ok=True)
    write_report(report, join(options['out'], 'receptive_field.json'))
    write_npy(join(options['out'], 'erf.npy'), report.erf_map)
    write_pgm(join(options['out'], 'erf_center.pgm'), report.erf_map)
    for metric, value in report_rows(report):
        print_result(metric, value)


def command_diagnose_mismatch(options):
    model = model_from_options(options)
    halo = halo_from_options(options, model)
    if 'probe' in options:
        geometry = ProbeGeometry(probe=options['probe'], split_offset=options.get('split_offset', 16),
                                 stride=options.get('stride', 16))
    else:
        geometry = probe_geometry_for(halo, model.alignment, options.get('split_offset', 16),
                                      options.get('stride', 16))
    spec = normalize_spec(options)
    reports = [tile_mismatch(model, image, geometry, halo, options.get('threshold', 0.5), spec,
                             options.get('workers', 1))
               for image, _ in load_samples(options['data'], labelled=False)]
    report = merge_mismatch(reports)
    emit_report(report, options)
    if options.get('assert_seamless') and not report.seamless:
        write_message('Tiles are not seamless: max dist {0:.3e}'.format(report.max_dist))
        return EXIT_NOT_SEAMLESS


def command_diagnose_disparity(options):
    model = model_from_options(options)
    volumes = [image for image, _ in load_samples(options['data'], labelled=False)]
    tile, halo = geometry_from_options(options, model)
    report = train_eval_disparity(model, volumes, tile, halo, normalize_spec(options), options.get('threshold', 0.5),
                                  options.get('workers', 1))
    emit_report(report, options)


def command_diagnose_sweep(options):
    model = model_from_options(options)
    halo = halo_from_options(options, model)
    geometries = [(tile, halo) for tile in sweep_tiles(options, model, halo)]
    results = tile_size_sweep(model, load_samples(options['data']), geometries, normalize_spec(options),
                              options.get('threshold', 0.5), options.get('workers', 1), class_names=CLASS_NAMES)
    emit_report(SweepReport.from_results(results, CLASS_NAMES), options)


def command_eval(options):
    model = model_from_options(options)
    tile, halo = geometry_from_options(options, model)
    report = dice_eval(model, load_samples(options['data']), tile, halo, normalize_spec(options),
                       mode=options.get('mode', Mode.EVAL), threshold=options.get('threshold', 0.5),
                       workers=options.get('workers', 1), class_names=CLASS_NAMES)
    emit_report(report, options)


def command_report(options):
    rows = []
    for path in options['report']:
        report = load_report(path)
        rows.extend([path, metric, value] for metric, value in report_rows(report))
    if options.get('out'):
        write_table(options['out'], ['report', 'metric', 'value'], rows)
    for path, metric, value in rows:
        print_result('{0}:{1}'.format(path, metric), value)


def command_repro(options):
    settings = ReproSettings(seed=options.get('seed', 0))
    for key, name in (('features', 'features'), ('steps', 'steps'), ('accum', 'accum_steps'), ('workers', 'workers')):
        if key in options:
            setattr(settings, name, options[key])
    table = reproduce(options['out'], settings)
    print(colored(json.dumps(table.header), color='magenta'))
    for row in table.as_rows():
        print(colored(json.dumps(row), color='magenta'))
    print_result('table', join(options['out'], TABLE_FILE))


HANDLERS = {
    'gen': command_gen,
    'train': command_train,
    'predict': command_predict,
    'diagnose-rf': command_diagnose_rf,
    'diagnose-mismatch': command_diagnose_mismatch,
    'diagnose-disparity': command_diagnose_disparity,
    'diagnose-sweep': command_diagnose_sweep,
    'eval': command_eval,
    'report': command_report,
    'repro': command_repro
}
