import csv
import logging

from utils.utils import fmt_value

log = logging.getLogger(__name__)


class Visualizer():
    """Appends per-epoch metric rows to a CSV log and echoes them to the logger."""

    def __init__(self, log_name, columns, provenance=None):
        self.log_name = log_name
        self.columns = list(columns)
        self.provenance = dict(provenance or {})
        with open(self.log_name, 'w', newline='') as log_file:
            csv.writer(log_file).writerow(self.columns + list(self.provenance))

    # losses: mapping of column -> value for one epoch
    def print_current_losses(self, epoch, losses):
        message = '(epoch: %d) ' % epoch
        for k, v in losses.items():
            if k == 'epoch':
                continue
            message += '%s: %s ' % (k, _short(v))
        log.info(message)
        row = [fmt_value(losses.get(c, epoch if c == 'epoch' else None)) for c in self.columns]
        with open(self.log_name, 'a', newline='') as log_file:
            csv.writer(log_file).writerow(row + list(self.provenance.values()))


def _short(value):
    if value is None:
        return 'n/a'
    if isinstance(value, float):
        return '%.4f' % value
    return str(value)
