"""Command-line wrapper: flags mirroring PlotSpec, or a key=value spec file."""

from __future__ import annotations

import argparse
import sys

from .render import PlotError, PlotSpec, SlopeTriangle, render


def parse_triangle(text: str) -> SlopeTriangle:
    """slope[:x:y[:size]] with anchors in axes-fraction coordinates."""
    parts = text.split(":")
    if len(parts) not in (1, 3, 4):
        raise argparse.ArgumentTypeError(
            f"triangle spec {text!r} must be slope, slope:x:y or slope:x:y:size"
        )
    try:
        numbers = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric triangle spec {text!r}") from None
    if len(numbers) == 1:
        return SlopeTriangle(numbers[0])
    if len(numbers) == 3:
        return SlopeTriangle(numbers[0], numbers[1], numbers[2])
    return SlopeTriangle(numbers[0], numbers[1], numbers[2], numbers[3])


def read_spec_file(path) -> dict:
    """Simple key=value format; repeated keys accumulate into lists."""
    multi = {"csv", "label", "triangle"}
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PlotError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in multi:
                out.setdefault(key, []).append(value)
            else:
                out[key] = value
    return out


def spec_from_args(args) -> PlotSpec:
    values = {
        "csv": list(args.csv or []),
        "label": list(args.label or []),
        "triangle": [],
        "x": args.x,
        "y": args.y,
        "group_by": args.group_by,
        "title": args.title,
        "x_label": args.x_label,
        "y_label": args.y_label,
        "output": args.output,
    }
    triangles = list(args.triangle or [])
    if args.spec:
        loaded = read_spec_file(args.spec)
        values["csv"] = values["csv"] or loaded.get("csv", [])
        values["label"] = values["label"] or loaded.get("label", [])
        triangles = triangles or [parse_triangle(t) for t in loaded.get("triangle", [])]
        for key in ("x", "y", "group_by", "title", "x_label", "y_label", "output"):
            if values[key] in (None, "") and key in loaded:
                values[key] = loaded[key]
    if not values["csv"]:
        raise PlotError("no input CSV given (use --csv or a spec file)")
    return PlotSpec(
        csv_paths=values["csv"],
        x_column=values["x"] or "h",
        y_column=values["y"] or "err_l2h1",
        group_by=values["group_by"] or None,
        labels=values["label"],
        triangles=tuple(triangles),
        title=values["title"] or "",
        x_label=values["x_label"] or "",
        y_label=values["y_label"] or "",
        output=values["output"] or "plot.png",
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotrender",
        description="Render log-log convergence figures from solver CSV output",
    )
    parser.add_argument("--spec", default=None, help="key=value spec file")
    parser.add_argument("--csv", action="append", help="input CSV (repeatable)")
    parser.add_argument("--label", action="append", help="series label per CSV (repeatable)")
    parser.add_argument("--x", default=None, help="x column (default h)")
    parser.add_argument("--y", default=None, help="y column (default err_l2h1)")
    parser.add_argument("--group-by", default=None, help="split series by this column")
    parser.add_argument("--triangle", action="append", type=parse_triangle,
                        help="slope triangle as slope[:x:y[:size]] (repeatable)")
    parser.add_argument("--title", default="")
    parser.add_argument("--x-label", default="")
    parser.add_argument("--y-label", default="")
    parser.add_argument("--output", default=None, help="output image path (.png or .svg)")
    args = parser.parse_args(argv)

    try:
        path = render(spec_from_args(args))
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
