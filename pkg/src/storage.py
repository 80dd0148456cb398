import csv
import json
import os
from typing import Any, Dict, Iterable, Sequence, TextIO

MOB_HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count", "cumulative_fraction")
HIST2D_HEADER = ("x_lo", "x_hi", "y_lo", "y_hi", "count")

_JSON_OPTS = dict(sort_keys=True, indent=1, separators=(",", ": "))


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, payload: Any):
    # sorted keys + fixed separators keep reruns byte-identical
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, **_JSON_OPTS)
        f.write("\n")


def _dumps_at(value: Any, depth: int) -> str:
    # JSON strings never hold a raw newline, so re-indenting line starts is safe
    return json.dumps(value, **_JSON_OPTS).replace("\n", "\n" + " " * depth)


def _write_list(f: TextIO, items: Iterable[Any], depth: int):
    first = True
    for item in items:
        f.write("[" if first else ",")
        f.write("\n" + " " * (depth + 1) + _dumps_at(item, depth + 1))
        first = False
    f.write("[]" if first else "\n" + " " * depth + "]")


def write_json_stream(path: str, payload: Dict[str, Any], stream_key: str, items: Iterable[Any]):
    """
    Same bytes as write_json(path, {**payload, stream_key: list(items)}) without
    holding the list. Values whose keys sort after stream_key are serialised
    only once items is exhausted, so they may be filled in while it runs.
    The file appears under `path` only after a complete write.
    """
    if stream_key in payload:
        raise ValueError(f"{stream_key!r} is both streamed and present in the payload")
    _ensure_parent(path)
    tmp = f"{path}.partial"
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write("{")
            for n, key in enumerate(sorted([*payload, stream_key])):
                f.write(",\n " if n else "\n ")
                f.write(json.dumps(key) + ": ")
                if key == stream_key:
                    _write_list(f, items, depth=1)
                else:
                    f.write(_dumps_at(payload[key], 1))
            f.write("\n}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
