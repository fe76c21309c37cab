"""Smoke test for the unitflow extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/unitflow-*.whl
"""

import os
import sys
import tempfile

import unitflow


def main():
    engine = unitflow.Engine(deterministic=True)
    engine.execute({"op": "set-project", "name": "smoke", "analyst": "py", "notes": ""})
    session = engine.new_session("explore")["session"]
    unit = engine.create_unit(session, "clusters")["unit"]

    # Appending an algorithm before any data is loaded is allowed but flagged.
    out = engine.append(unit, "select-algorithm", {"name": "kmeans"})
    status = out["reports"][0]["status"]
    assert status in ("warn", "broken"), out
    engine.undo(unit)
    assert engine.validate(unit)["status"] == "ok"

    engine.append(unit, "load-data", {"dataset": "cars"})
    engine.append(unit, "select-algorithm", {"name": "kmeans"})
    engine.append(unit, "set-parameter", {"name": "k", "value": 3})
    h = engine.state_hash(unit)
    assert len(h) == 64

    try:
        engine.undo("u999")
    except unitflow.EngineError as e:
        kind, _ = e.args
        assert kind == "UnknownUnit", kind
    else:
        raise AssertionError("undo on a missing unit should fail")

    graph = engine.sankey("unit", session)
    assert len(graph["nodes"]) == 1
    svg = engine.sankey_svg("unit", session)
    assert svg.startswith("<svg") and svg == engine.sankey_svg("unit", session)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ws.json")
        engine.save(path)
        reopened = unitflow.Engine.open(path)
        assert reopened.revision == engine.revision
        assert reopened.state_hash(unit) == h

    for name in unitflow.fixture_names():
        _, report = unitflow.Engine.fixture(name)
        assert all(r["passed"] for r in report["results"]), report

    stats = unitflow.fuzz(scripts=50)
    assert stats["disagreements"] == [] and stats["fix_failures"] == [], stats

    print("unitflow smoke test passed:", engine)
    return 0


if __name__ == "__main__":
    sys.exit(main())
