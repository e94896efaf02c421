import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ttvaccess import _kernels  # noqa: E402

MINIMAL = {
    "stops.txt": "stop_id,stop_name,stop_lat,stop_lon\nA,Alpha,51.5,-0.1\nB,Beta,51.51,-0.1\n",
    "routes.txt": "route_id,route_type\nR1,3\n",
    "trips.txt": "route_id,service_id,trip_id\nR1,WK,T1\n",
    "stop_times.txt": "trip_id,arrival_time,departure_time,stop_id,stop_sequence\n"
                      "T1,09:00:00,09:00:00,A,1\nT1,09:10:00,09:10:00,B,2\n",
    "calendar.txt": "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n"
                    "WK,1,1,1,1,1,0,0,20240101,20241231\n",
}


def write_gtfs(root: Path, **overrides) -> Path:
    """Write the minimal feed with any file replaced (``None`` drops it)."""
    root.mkdir(parents=True, exist_ok=True)
    files = dict(MINIMAL)
    files.update({k.replace("_txt", ".txt"): v for k, v in overrides.items()})
    for name, text in files.items():
        if text is not None:
            (root / name).write_text(text, encoding="utf-8")
    return root


@pytest.fixture
def gtfs_dir(tmp_path):
    return lambda **kw: write_gtfs(tmp_path / "gtfs", **kw)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    return request.param


def kernels(name):
    """(knn, raptor, global_perm, local_perm) for one backend."""
    if name == "numba":
        return dict(knn=_kernels.knn_numba, raptor=_kernels.raptor_numba,
                    global_perm=_kernels.global_moran_perm_numba, local_perm=_kernels.local_moran_perm_numba)
    return dict(knn=_kernels.knn_numpy, raptor=_kernels.raptor_numpy,
                global_perm=_kernels.global_moran_perm_numpy, local_perm=_kernels.local_moran_perm_numpy)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""
    log = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        log.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
