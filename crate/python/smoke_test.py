"""Quick end-to-end check of the Python bindings.

Build and install first:
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import pathlib
import tempfile

import spinhall_py as sh


def main():
    km = sh.ModelSpec.kane_mele(0.2)
    print(km)

    h = sh.bloch_hamiltonian(km, 0.3, -1.1)
    assert len(h) == 4
    for i in range(4):
        for j in range(4):
            assert abs(h[i][j] - h[j][i].conjugate()) < 1e-12

    sch = sh.spin_chern_transfer(km, n_k=128)
    print("transfer:", sch)
    assert sch["+1/2"][0] == 1 and sch["-1/2"][0] == -1

    assert sh.fhs_chern(km, 0.5, n=24) == 1
    assert sh.fhs_chern(km, None, n=24) == 0

    lo, hi = sh.bulk_gap(km)
    assert lo < 0.0 < hi

    j = sh.edge_current(km, n2=32, n_k=64)
    print("edge current:", j["j_lower"], j["j_upper"])
    assert abs(abs(j["j_e"]) - 1.0) < 0.05
    assert abs(j["j_lower"] + j["j_upper"]) < 1e-6

    graphene = sh.ModelSpec.kane_mele(0.0)
    try:
        sh.bulk_gap(graphene)
    except sh.GuardError as e:
        assert e.args[1] == "gap hypothesis violated"
    else:
        raise AssertionError("graphene has no gap")

    spec = json.loads(km.to_json())
    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "cfg.json"
        cfg.write_text(json.dumps({"format_version": 1, "task": "spin-chern-transfer", "model": spec}))
        code, msg = sh.run_config(str(cfg), out=str(pathlib.Path(tmp) / "out"))
        assert code == 0, msg
        rows = (pathlib.Path(tmp) / "out" / "spin_chern_transfer.csv").read_text().splitlines()
        assert rows[0].startswith("l,SCh")

        cfg.write_text("{not json")
        code, _ = sh.run_config(str(cfg), out=str(pathlib.Path(tmp) / "bad"))
        assert code == 2

    assert math.isfinite(j["g_norm6"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
