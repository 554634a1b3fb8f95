"""Collects one verdict per acceptance criterion for the end-of-run summary."""

RESULTS: dict = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    RESULTS[number] = (title, bool(ok), detail)
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}" + (f" ({detail})" if detail else "")
    print(line)
    return ok


def summary_lines() -> list:
    return [f"{'PASS' if ok else 'FAIL'} [{n:2d}] {title}" + (f" ({detail})" if detail else "")
            for n, (title, ok, detail) in sorted(RESULTS.items())]
