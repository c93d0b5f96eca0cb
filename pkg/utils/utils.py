import csv
import hashlib
import json
import os

from utils.errors import MissingArtifactError


def mkdirs(paths):
    if isinstance(paths, list) and not isinstance(paths, str):
        for path in paths:
            mkdir(path)
    else:
        mkdir(paths)


def mkdir(path):
    if not os.path.exists(path):
        os.makedirs(path)


def require_file(path, what):
    """Raise MissingArtifactError if `path` does not exist."""
    if not os.path.isfile(path):
        raise MissingArtifactError('%s not found: %s' % (what, path))
    return path


def stream_seed(master_seed, name):
    """Derive the seed of a named random stream from the master seed.

    The mapping only depends on (master_seed, name), so adding a stream never
    shifts the seeds of the others.
    """
    digest = hashlib.sha256(('%d:%s' % (master_seed, name)).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') & ((1 << 63) - 1)


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            sha.update(chunk)
    return sha.hexdigest()


def dump_json(path, payload):
    # sorted keys and a trailing newline keep reports byte-stable
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def write_csv(path, header, rows):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(v) for v in row])


def fmt_value(value):
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ''
    return value
