"""Report files: a JSON document plus an optional flat CSV table.

File names embed a short content hash of the run configuration, and every
file starts with the echoed configuration so a report is self-describing.
"""

import csv
import hashlib
import json
import os


def _canonical(config):
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def params_hash(config):
    """Twelve hex chars identifying the configuration."""
    return hashlib.sha256(_canonical(config).encode("utf-8")).hexdigest()[:12]


def write_report(out_dir, stem, config, body, rows=None, header=None):
    """Write stem-<hash>.json (and .csv when rows are given); return paths."""
    os.makedirs(out_dir, exist_ok=True)
    tag = params_hash(config)
    paths = []
    jpath = os.path.join(out_dir, "%s-%s.json" % (stem, tag))
    with open(jpath, "w") as fh:
        json.dump({"config": config, "report": body}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(jpath)
    if rows is not None:
        cpath = os.path.join(out_dir, "%s-%s.csv" % (stem, tag))
        with open(cpath, "w", newline="") as fh:
            fh.write("# config %s\n" % _canonical(config))
            writer = csv.writer(fh)
            if header is not None:
                writer.writerow(header)
            writer.writerows(rows)
        paths.append(cpath)
    return paths
