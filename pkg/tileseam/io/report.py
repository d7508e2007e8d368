"""
JSON and CSV serialization of diagnostic reports.

JSON documents carry a ``kind`` field (``mismatch``, ``disparity``, ``dice``, ``receptive_field``, ``sweep``)
and the fields of the matching report class. CSV files hold one ``metric,value`` row per scalar; a seamless
mismatch is written as the literal ``no``.
"""
import csv
import json
import numpy as np
from ..core.errors import DataFormatError
from ..core.diagnose import MismatchReport, DisparityReport, DiceReport, RFReport, SweepReport, FULL_TILE
from ..core.synthdata import CLASS_NAMES

FORMATS = ('json', 'csv')

REPORT_TYPES = {
    'mismatch': MismatchReport,
    'disparity': DisparityReport,
    'dice': DiceReport,
    'receptive_field': RFReport,
    'sweep': SweepReport
}


def _channel_names(count, names=None):
    names = list(names or [])
    if len(names) == count:
        return names
    if count == len(CLASS_NAMES):
        return list(CLASS_NAMES)
    return ['channel{0}'.format(index) for index in range(count)]


def report_rows(report):
    """
    ``(metric, value)`` pairs of a report, in a fixed order
    """
    if isinstance(report, MismatchReport):
        names = _channel_names(len(report.per_channel_mismatch))
        rows = [('max_dist', report.max_dist), ('tiles_compared', report.tiles_compared)]
        rows.extend(('mismatch/{0}'.format(name), cell) for name, cell in zip(names, report.mismatch_cells()))
        return rows
    if isinstance(report, DisparityReport):
        rows = [('disparity', report.median)]
        rows.extend(('disparity/volume{0}'.format(index), value) for index, value in enumerate(report.per_volume))
        return rows
    if isinstance(report, DiceReport):
        names = _channel_names(len(report.per_class_median), report.class_names)
        return [('dice-{0}/{1}'.format(report.mode, name), value)
                for name, value in zip(names, report.per_class_median)]
    if isinstance(report, RFReport):
        left, right = report.erf_support()
        trf = report.trf if report.trf == FULL_TILE else report.trf.radius
        return [('trf_radius', trf), ('erf_radius', max(left + right)), ('samples', report.samples)]
    if isinstance(report, SweepReport):
        rows = [('dice_spread', report.spread)]
        for (tile, halo), medians in zip(report.geometries, report.per_geometry):
            names = _channel_names(len(medians), report.class_names)
            geometry = 'tile{0}-halo{1}'.format('x'.join(str(t) for t in tile), halo)
            rows.extend(('dice/{0}/{1}'.format(geometry, name), value) for name, value in zip(names, medians))
        return rows
    raise TypeError('Cannot serialize {0}'.format(type(report).__name__))


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report, path, format='json'):
    if format not in FORMATS:
        raise ValueError('Unknown report format {0}, expected one of {1}'.format(format, FORMATS))
    if format == 'json':
        with open(path, 'w') as fp:
            json.dump(report.to_dict(), fp, indent=2, sort_keys=True)
    else:
        with open(path, 'w', newline='') as fp:
            writer = csv.writer(fp)
            writer.writerow(['metric', 'value'])
            for metric, value in report_rows(report):
                writer.writerow([metric, _format(value)])
    return path


def load_report(path):
    try:
        with open(path) as fp:
            values = json.load(fp)
    except ValueError as exc:
        raise DataFormatError('{0}: not a JSON report ({1})'.format(path, exc))
    kind = values.get('kind') if isinstance(values, dict) else None
    if kind not in REPORT_TYPES:
        raise DataFormatError('{0}: unknown report kind {1}'.format(path, kind))
    try:
        return REPORT_TYPES[kind].from_dict(values)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError('{0}: malformed {1} report ({2!r})'.format(path, kind, exc))


def write_table(path, header, rows):
    with open(path, 'w', newline='') as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(cell) for cell in row])
    return path


def write_training_log(log, path):
    rows = [['' if cell is None else cell for cell in row] for row in log.rows()]
    return write_table(path, log.FIELDS, rows)


def write_pgm(path, volume):
    """
    Center slice (along the first axis) of ``volume`` as an 8-bit binary PGM, min-max scaled
    """
    plane = np.asarray(volume, dtype=np.float64)[volume.shape[0] // 2]
    low, high = plane.min(), plane.max()
    scaled = np.zeros(plane.shape) if high == low else (plane - low) / (high - low)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, 'wb') as fp:
        fp.write('P5\n{0} {1}\n255\n'.format(pixels.shape[1], pixels.shape[0]).encode('ascii'))
        fp.write(pixels.tobytes())
    return path
