import json
from os.path import exists, isfile, isdir
from .utils import write_message, full_name, ERROR, parse_separated_string, parse_float, all_subclasses
from ..core.layers import Mode, NormKind
from ..core.infer import NormalizeStrategy

HALO_FROM_RECEPTIVE_FIELD = 'trf'
NEVER = 'never'


def load_config(path):
    if not isfile(path):
        raise InvalidOption('Config file {0} does not exist'.format(path))
    try:
        with open(path) as fp:
            values = json.load(fp)
    except ValueError as exc:
        raise InvalidOption('Config file {0} is not valid JSON ({1})'.format(path, exc))
    if not isinstance(values, dict):
        raise InvalidOption('Config file {0} must contain a JSON object'.format(path))
    return values


def merge_config(docopt_options):
    """
    Fills options missing on the command line from the ``--config`` file; explicit flags win
    """
    path = docopt_options.get('--config')
    if not path:
        return docopt_options
    merged = dict(docopt_options)
    for key, value in load_config(path).items():
        flag = '--{0}'.format(key.replace('_', '-'))
        if flag not in docopt_options or flag == '--config':
            raise InvalidOption('Unknown config key "{0}"'.format(key))
        if docopt_options[flag] is None or docopt_options[flag] is False:
            merged[flag] = value
    return merged


def parse_options(docopt_options):
    options = {}
    parsers = {subcls.format_key(): subcls for subcls in all_subclasses(ArgumentBase) if subcls.key is not None}
    for key in docopt_options.keys():
        if key in ('--help', '--version'):
            continue
        if key.startswith('--') or (key.startswith('<') and key.endswith('>')):
            if docopt_options[key] is None or docopt_options[key] is False:
                continue
            if key not in parsers:
                raise InvalidOption('No suitable parser found for argument {0}'.format(key))
            parser = parsers[key](docopt_options)
            options[parser.dest] = parser()
        else:
            options[key] = docopt_options[key]
    return options


class InvalidOption(Exception):
    """
    Arguments or options are invalid
    """


class ArgumentBase(object):
    key = None
    option = True

    def __init__(self, options):
        self._options = options

    @classmethod
    def format_key(cls):
        return ('--{key}' if cls.option else '<{key}>').format(key=cls.key)

    @property
    def dest(self):
        return self.key.replace('-', '_')

    @property
    def raw_value(self):
        return self._options[self.format_key()]

    def parse(self, raw):
        return raw

    def __call__(self):
        try:
            return self.parse(self.raw_value)
        except (InvalidOption, ValueError, TypeError) as exc:
            message = 'Failed to parse "{arg}" for {what} "{key}": {reason}'.format(
                arg=self.raw_value, what='option' if self.option else 'argument', key=self.key, reason=exc)
            self.write_message(message)
            raise InvalidOption(message)

    def write_message(self, message, level=ERROR):
        write_message('{name}: {message}'.format(name=full_name(self), message=message), level=level)


class IntegerOption(ArgumentBase):
    minimum = None

    def parse(self, raw):
        value = raw if isinstance(raw, int) and not isinstance(raw, bool) else int(str(raw).strip())
        if self.minimum is not None and value < self.minimum:
            raise InvalidOption('must be at least {0}'.format(self.minimum))
        return value


class FloatOption(ArgumentBase):
    lower = None
    upper = None

    def parse(self, raw):
        value = parse_float(raw, raise_exc=True)
        if self.lower is not None and value < self.lower or self.upper is not None and value > self.upper:
            raise InvalidOption('must lie in [{0}, {1}]'.format(self.lower, self.upper))
        return value


class IntegerTupleOption(ArgumentBase):
    """
    Comma separated integers. With ``length`` set a single value is repeated along every axis.
    """
    length = None
    minimum = 1
    multiple_of = 1

    def parse(self, raw):
        if isinstance(raw, (list, tuple)):
            values = [int(v) for v in raw]
        elif isinstance(raw, int):
            values = [raw]
        else:
            values = [int(v) for v in parse_separated_string(raw)]
        if not values:
            raise InvalidOption('expected at least one value')
        if self.length is not None:
            if len(values) == 1:
                values = values * self.length
            if len(values) != self.length:
                raise InvalidOption('expected 1 or {0} values'.format(self.length))
        if any(v < self.minimum or v % self.multiple_of for v in values):
            raise InvalidOption('values must be multiples of {0} and at least {1}'
                                .format(self.multiple_of, self.minimum))
        return tuple(values)


class ChoiceOption(ArgumentBase):
    choices = None

    def parse(self, raw):
        try:
            return self.choices(str(raw).lower())
        except ValueError:
            raise InvalidOption('expected one of {0}'.format([choice.value for choice in self.choices]))


class PathOption(ArgumentBase):

    def parse(self, raw):
        return str(raw)


class ExistingPathsArgument(ArgumentBase):
    option = False

    def parse(self, raw):
        paths = [raw] if isinstance(raw, str) else list(raw)
        missing = [path for path in paths if not exists(path)]
        if missing:
            raise InvalidOption('paths {0} do not exist'.format(missing))
        return paths


class OutOption(PathOption):
    key = 'out'


class ConfigOption(PathOption):
    key = 'config'


class CheckpointOption(PathOption):
    key = 'checkpoint'

    def parse(self, raw):
        if not isdir(raw):
            raise InvalidOption('checkpoint directory {0} does not exist'.format(raw))
        return raw


class DataArgument(ExistingPathsArgument):
    key = 'data'


class ReportArgument(ExistingPathsArgument):
    key = 'report'


class VolumeArgument(ExistingPathsArgument):
    key = 'volume'

    def parse(self, raw):
        return super(VolumeArgument, self).parse(raw)[0]


class SeedOption(IntegerOption):
    key = 'seed'
    minimum = 0


class LevelsOption(IntegerOption):
    key = 'levels'
    minimum = 1


class BlocksOption(IntegerOption):
    key = 'blocks'
    minimum = 1


class StepsOption(IntegerOption):
    key = 'steps'
    minimum = 1


class AccumOption(IntegerOption):
    key = 'accum'
    minimum = 1


class RampOption(IntegerOption):
    key = 'ramp'
    minimum = 0


class CheckpointEveryOption(IntegerOption):
    key = 'checkpoint-every'
    minimum = 0


class WorkersOption(IntegerOption):
    key = 'workers'
    minimum = 1


class SamplesOption(IntegerOption):
    key = 'samples'
    minimum = 1


class SplitOffsetOption(IntegerOption):
    key = 'split-offset'
    minimum = 1


class StrideOption(IntegerOption):
    key = 'stride'
    minimum = 1


class VerbosityOption(IntegerOption):
    key = 'verbosity'
    minimum = 0


class WarmupOption(IntegerOption):
    key = 'warmup'
    minimum = 0

    def parse(self, raw):
        if str(raw).strip().lower() == NEVER:
            return None
        return super(WarmupOption, self).parse(raw)


class HaloOption(IntegerTupleOption):
    key = 'halo'
    length = 3
    minimum = 0

    def parse(self, raw):
        if str(raw).strip().lower() == HALO_FROM_RECEPTIVE_FIELD:
            return HALO_FROM_RECEPTIVE_FIELD
        return super(HaloOption, self).parse(raw)


class LrOption(FloatOption):
    key = 'lr'
    lower = 0.0


class ThresholdOption(FloatOption):
    key = 'threshold'
    lower = 0.0
    upper = 1.0


class ShapeOption(IntegerTupleOption):
    key = 'shape'
    length = 3
    multiple_of = 4


class TileOption(IntegerTupleOption):
    key = 'tile'
    length = 3


class TilesOption(IntegerTupleOption):
    """
    Edge lengths of cubic tiles, one per geometry of a sweep
    """
    key = 'tiles'


class ProbeOption(IntegerTupleOption):
    key = 'probe'
    length = 3


class FeaturesOption(IntegerTupleOption):
    key = 'features'


class BlobsOption(IntegerTupleOption):
    key = 'blobs'
    length = 2
    minimum = 0


class RadiusOption(ArgumentBase):
    key = 'radius'

    def parse(self, raw):
        values = raw if isinstance(raw, (list, tuple)) else parse_separated_string(str(raw))
        values = [parse_float(v, raise_exc=True) for v in values]
        if len(values) == 1:
            values = values * 2
        if len(values) != 2 or any(v <= 0.0 for v in values):
            raise InvalidOption('expected one or two positive radii')
        return tuple(values)


class NormOption(ChoiceOption):
    key = 'norm'
    choices = NormKind


class InputNormOption(ChoiceOption):
    key = 'input-norm'
    choices = NormalizeStrategy


class ModeOption(ChoiceOption):
    key = 'mode'
    choices = Mode


class FormatOption(ArgumentBase):
    key = 'format'
    formats = ('json', 'csv')

    def parse(self, raw):
        if str(raw).lower() not in self.formats:
            raise InvalidOption('expected one of {0}'.format(self.formats))
        return str(raw).lower()


class AssertSeamlessOption(ArgumentBase):
    key = 'assert-seamless'

    def parse(self, raw):
        return bool(raw)
