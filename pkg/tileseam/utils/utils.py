import sys
import logging
from termcolor import colored

ERROR = logging.ERROR
WARNING = logging.WARNING
INFO = logging.INFO
DEBUG = logging.DEBUG

VERBOSITY_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG
}

logger = logging.getLogger('tileseam')


def configure_logging(verbosity=0):
    level = VERBOSITY_LEVELS.get(min(max(int(verbosity), 0), 2))
    logging.basicConfig(format='%(message)s', stream=sys.stderr)
    logger.setLevel(level)
    return level


def parse_float(string, except_val=None, raise_exc=False):
    if raise_exc:
        return float(string)
    else:
        try:
            return float(string)
        except ValueError:
            return except_val


def parse_separated_string(string, delimiter=','):
    return [part.strip() for part in string.split(delimiter) if part.strip()]


def write_message(message, level=logging.ERROR):
    color_mapping = {
        logging.ERROR: 'red',
        logging.WARNING: 'yellow',
        logging.INFO: 'green',
        logging.DEBUG: 'blue'
    }
    text = colored(message, color=color_mapping[level])
    logger.log(level, text)


def full_name(thing):
    return thing.__module__+'.'+thing.__class__.__name__


def all_subclasses(cls):
    return cls.__subclasses__() + [g for s in cls.__subclasses__() for g in all_subclasses(s)]
