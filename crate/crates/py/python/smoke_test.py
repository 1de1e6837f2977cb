import json
import os
import pathlib
import shutil
import tempfile

import dmasf

ROOT = pathlib.Path(__file__).resolve().parents[3]


def unit_binary():
    found = os.environ.get("DMASF_UNIT_BIN") or shutil.which("dmasf")
    if found:
        return found
    built = ROOT / "target" / "debug" / "dmasf"
    return str(built) if built.exists() else None


def test_load_and_validate():
    spec = dmasf.Spec.from_file(ROOT / "specs" / "weather_news.dmas.json")
    assert spec.agents == ["news", "weather"]
    assert dmasf.validate(spec.to_json()) == []
    doc = json.loads(spec.to_json())
    doc["workflow"]["agents"].append({"name": "orphan", "model": "gpt-4o"})
    diags = dmasf.validate(json.dumps(doc))
    assert diags and diags[0].startswith("UNREACHABLE")
    try:
        dmasf.Spec.from_json("{")
    except dmasf.SpecError as e:
        assert str(e).startswith("PARSE")
    else:
        raise AssertionError("broken JSON accepted")


def test_compile():
    plan = dmasf.compile(dmasf.Spec.weather_news())
    assert plan.units == {"u0": ["news"], "u1": ["weather"]}
    files = plan.files()
    assert "compose.yaml" in files and "plan.json" in files
    with tempfile.TemporaryDirectory() as d:
        written = plan.emit(d)
        assert sorted(written) == sorted(files)


def test_run_and_optimize():
    spec = dmasf.Spec.weather_news()
    trace, profile = dmasf.run(spec, "Paris")
    assert len(trace.trace_id) == 32
    assert trace.activation_count("weather") == 1
    assert trace.final_outputs()[0][0] == "news"
    assert profile.edge("weather", "news")[0] == 1

    binary = unit_binary()
    if binary:
        distributed, _ = dmasf.run(spec, "Paris", mode="processes", unit_binary=binary)
        assert distributed.canonical() == trace.canonical()

    heavy = dmasf.Profile()
    heavy.set_edge("weather", "news", 500, 200_000)
    blocks = dmasf.optimize(spec, heavy)
    assert blocks == [["news", "weather"]]
    assert dmasf.cost(blocks, heavy) == 0.0
    assert abs(dmasf.cost([["news"], ["weather"]], heavy) - 700.0) < 1e-9


def test_run_failure_keeps_trace():
    spec = dmasf.Spec.weather_news()
    try:
        dmasf.run(spec, "Paris", hop_budget=0)
    except dmasf.RunFailed as e:
        assert "budget" in str(e)
        assert e.trace.activation_count("weather") == 1
    else:
        raise AssertionError("budget 0 did not fail")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
