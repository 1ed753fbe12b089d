"""File formats and atomic output writing."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .spin import SpinSystem

DATA_DIR = Path(__file__).parent / "data"


def _pairs(entries, n: int, name: str) -> np.ndarray:
    m = np.zeros((n, n))
    seen = set()
    if not isinstance(entries, list):
        raise ValidationError(f"{name}: expected a list of [j, k, value] triples")
    for pos, item in enumerate(entries):
        if not (isinstance(item, (list, tuple)) and len(item) == 3):
            raise ValidationError(f"{name}[{pos}]: expected [j, k, value], got {item!r}")
        j, k, val = item
        if not (isinstance(j, int) and isinstance(k, int)):
            raise ValidationError(f"{name}[{pos}]: indices must be integers")
        if not 0 <= j < k < n:
            raise ValidationError(f"{name}[{pos}]: need 0 <= j < k < {n}, got j={j}, k={k}")
        if (j, k) in seen:
            raise ValidationError(f"{name}[{pos}]: duplicate entry for pair ({j}, {k})")
        seen.add((j, k))
        try:
            m[j, k] = m[k, j] = float(val)
        except (TypeError, ValueError):
            raise ValidationError(f"{name}[{pos}]: value {val!r} is not a number") from None
    return m


def system_from_json(data: dict) -> SpinSystem:
    if not isinstance(data, dict):
        raise ValidationError("system file must hold a JSON object")
    for key in ("n", "shifts_hz", "d_hz"):
        if key not in data:
            raise ValidationError(f"system file is missing field {key!r}")
    n = data["n"]
    if not isinstance(n, int) or n < 1:
        raise ValidationError(f"n: expected a positive integer, got {n!r}")
    shifts = data["shifts_hz"]
    if not isinstance(shifts, list) or len(shifts) != n:
        raise ValidationError(f"shifts_hz: expected {n} values")
    try:
        shifts = [float(s) for s in shifts]
    except (TypeError, ValueError):
        raise ValidationError("shifts_hz: all entries must be numbers") from None
    d = _pairs(data["d_hz"], n, "d_hz")
    j = _pairs(data.get("j_hz", []), n, "j_hz")
    lw = data.get("linewidths_hz")
    return SpinSystem(shifts, d, j, None if lw is None else np.asarray(lw, dtype=float))


def system_to_json(sys: SpinSystem) -> dict:
    iu = zip(*np.triu_indices(sys.n, 1))
    pairs = [(int(a), int(b)) for a, b in iu]
    out = {
        "n": sys.n,
        "shifts_hz": sys.shifts_hz.tolist(),
        "d_hz": [[a, b, float(sys.d_hz[a, b])] for a, b in pairs if sys.d_hz[a, b] != 0],
    }
    if np.any(sys.j_hz):
        out["j_hz"] = [[a, b, float(sys.j_hz[a, b])] for a, b in pairs if sys.j_hz[a, b] != 0]
    if sys.linewidths_hz is not None:
        out["linewidths_hz"] = np.asarray(sys.linewidths_hz).tolist()
    return out


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def load_system(path) -> SpinSystem:
    try:
        return system_from_json(read_json(path))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def standin_system() -> SpinSystem:
    """The bundled synthetic four-spin system (data/standin_4spin.json).

    Its shifts and couplings are inputs chosen so that all 16 eigenstates
    label unambiguously; they are not measured values of a real molecule.
    """
    return load_system(DATA_DIR / "standin_4spin.json")


def matrix_from_json(data: dict) -> np.ndarray:
    try:
        re = np.asarray(data["real"], dtype=float)
        im = np.asarray(data.get("imag", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"matrix file needs 'real' (and optional 'imag'): {exc}") from None
    if re.shape != im.shape or re.ndim != 2 or re.shape[0] != re.shape[1]:
        raise ValidationError("matrix must be square with matching real/imag parts")
    return re + 1j * im


def matrix_to_json(m: np.ndarray) -> dict:
    return {"real": np.real(m).tolist(), "imag": np.imag(m).tolist()}


def read_csv_columns(path, columns: tuple[str, ...]) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in columns):
        raise ValidationError(f"{path}: header must contain columns {', '.join(columns)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            rows.append([float(row[c]) for c in columns])
        except (TypeError, ValueError):
            raise ValidationError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.array(rows)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_outputs(files: dict) -> None:
    """Write every ``path -> text`` entry via temp file + rename.

    All temp files are written first, so a failure leaves no partial
    output behind.
    """
    staged = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)
