"""Run artifacts: JSON-lines for machines, aligned tables for humans.

Everything written here is deterministic: keys are sorted, floats use
repr (shortest round-trip), and column widths depend only on content.
"""

import json


def _jsonable(v):
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        try:
            return v.item()
        except (AttributeError, ValueError):
            pass
    return v


def dumps_row(row):
    clean = {k: _jsonable(v) for k, v in row.items()}
    return json.dumps(clean, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(dumps_row(row) + "\n")


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_table(rows, columns=None):
    """Aligned text table; numbers right-aligned, text left-aligned."""
    rows = list(rows)
    if not rows:
        return "(empty)\n"
    if columns is None:
        columns = list(rows[0].keys())
    cells = [[_fmt(row.get(c, "")) for c in columns] for row in rows]
    widths = [
        max(len(c), *(len(line[i]) for line in cells))
        for i, c in enumerate(columns)
    ]
    numeric = [
        all(isinstance(row.get(c), (int, float)) for row in rows) for c in columns
    ]

    def line(parts):
        out = []
        for i, p in enumerate(parts):
            out.append(p.rjust(widths[i]) if numeric[i] else p.ljust(widths[i]))
        return "  ".join(out).rstrip()

    header = line(list(columns))
    rule = "  ".join("-" * w for w in widths)
    body = "\n".join(line(c) for c in cells)
    return f"{header}\n{rule}\n{body}\n"


def write_table(path, rows, columns=None):
    with open(path, "w") as fh:
        fh.write(render_table(rows, columns))


def write_report(base, rows, columns=None):
    """Write rows as both <base>.jsonl and <base>.txt."""
    write_jsonl(f"{base}.jsonl", rows)
    write_table(f"{base}.txt", rows, columns)
