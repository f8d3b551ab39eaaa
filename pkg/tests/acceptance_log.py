"""Collects one PASS/FAIL line per acceptance criterion for the end-of-run summary."""

LINES = []


def report(number, title, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    LINES.append(line)
    print(line, flush=True)
    return ok
