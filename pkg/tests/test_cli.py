import csv
import io
import math

from drrbound.analysis import COMPARE_METHODS, analyze, summary, to_csv
from drrbound.cli import EXIT_INPUT, EXIT_OK, main
from drrbound.model import load_spec

from test_model import TOY as TOY_PATH

TOY = str(TOY_PATH)

HEADER = """classes:
  - {name: c, max_packet: 100 bit}
nodes:
  - {id: a, rate: 100 bps, latency: 1 s, epsilon: 1 bit, quanta: {c: 200 bit}}
  - {id: b, rate: 100 bps, latency: 1 s, epsilon: 1 bit, quanta: {c: 200 bit}}
  - {id: x, rate: 100 bps, latency: 1 s, epsilon: 1 bit, quanta: {c: 200 bit}}
"""


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def write(tmp_path, body, name="net.yaml"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return str(p)


def test_analyze_full_gives_finite_bounds(tmp_path, capsys):
    out = tmp_path / "bounds.csv"
    assert main(["analyze", TOY, "--method", "full", "--impl", "2", "-o", str(out)]) == EXIT_OK
    table = rows(out.read_text())
    assert [r["flow"] for r in table] == ["f1", "f2", "f3", "f4", "f5"]
    assert all(math.isfinite(float(r["full"])) and r["converged"] == "yes" for r in table)
    assert "wall time" in capsys.readouterr().err


def test_two_methods_are_ordered(capsys):
    assert main(["analyze", TOY, "--method", "tfa,full"]) == EXIT_OK
    table = rows(capsys.readouterr().out)
    assert list(table[0]) == ["flow", "class", "path_length", "tfa", "full", "converged"]
    for r in table:
        assert float(r["full"]) <= float(r["tfa"]) + 1e-9


def test_compare_has_every_method(capsys):
    assert main(["compare", TOY, "--impl", "1"]) == EXIT_OK
    table = rows(capsys.readouterr().out)
    for r in table:
        vals = {m: float(r[m]) for m in COMPARE_METHODS}
        assert vals["full"] <= vals["full-plp"] + 1e-6
        assert vals["tfa+iplp"] <= vals["tfa"] + 1e-6
        assert vals["full-plp"] <= vals["full-sum"] + 1e-6


def test_missing_file_is_an_input_error(capsys):
    assert main(["analyze", "does-not-exist.yaml"]) == EXIT_INPUT
    assert "no such file" in capsys.readouterr().err


def test_invalid_spec_is_an_input_error(tmp_path, capsys):
    path = write(tmp_path, "flows:\n  - {id: f, class: c, path: [a, nowhere], rate: 1 bps, burst: 10 bit}\n")
    assert main(["analyze", path]) == EXIT_INPUT
    assert "nowhere" in capsys.readouterr().err


def test_unknown_method_is_an_input_error():
    assert main(["analyze", TOY, "--method", "magic"]) == EXIT_INPUT


def test_empty_flow_set_gives_header_only(tmp_path, capsys):
    assert main(["analyze", write(tmp_path, "flows: []\n"), "--method", "tfa,full"]) == EXIT_OK
    assert capsys.readouterr().out == "flow,class,path_length,tfa,full,converged\n"


def test_unbounded_flow_prints_inf(tmp_path, capsys):
    ring = "flows:\n" + "".join(
        f"  - {{id: f{i}, class: c, path: [{p}], rate: 45 bps, burst: 100 bit}}\n"
        for i, p in enumerate(["a, b, x", "b, x, a", "x, a, b"]))
    assert main(["analyze", write(tmp_path, ring), "--method", "tfa"]) == EXIT_OK
    captured = capsys.readouterr()
    assert {r["tfa"] for r in rows(captured.out)} == {"inf"}
    assert "divergent classes after initial phase: c" in captured.err


def test_side_outputs(tmp_path):
    lp_dir, trace, dot = tmp_path / "lp", tmp_path / "log.txt", tmp_path / "g.dot"
    code = main(["analyze", TOY, "--impl", "generic", "--workers", "2", "--emit-lp", str(lp_dir),
                 "--trace", str(trace), "--dot", str(dot), "-o", str(tmp_path / "b.csv")])
    assert code == EXIT_OK
    assert list(lp_dir.glob("iplp_delay_*.lp")) and list(lp_dir.glob("fp_plp_*.lp"))
    assert trace.read_text().count("\n") > 10
    assert "style=dashed" in dot.read_text()


def test_report_is_deterministic(capsys):
    main(["analyze", TOY, "--impl", "generic", "--seed", "4"])
    first = capsys.readouterr().out
    main(["analyze", TOY, "--impl", "generic", "--seed", "4"])
    assert capsys.readouterr().out == first


def test_simulate_and_check(tmp_path, capsys):
    trace = tmp_path / "events.txt"
    assert main(["simulate", TOY, "--seeds", "2", "--policy", "random", "--trace", str(trace)]) == EXIT_OK
    table = rows(capsys.readouterr().out)
    assert {r["seed"] for r in table} == {"0", "1"} and all(float(r["max_delay"]) > 0 for r in table)
    assert "depart" in trace.read_text()
    assert main(["check", TOY, "--seeds", "3"]) == EXIT_OK
    err = capsys.readouterr().err
    assert err.count(": pass") == 3


def test_utilization_scales_rates(capsys):
    main(["analyze", TOY, "--method", "tfa", "--utilization", "0.5"])
    low = rows(capsys.readouterr().out)
    main(["analyze", TOY, "--method", "tfa"])
    nominal = rows(capsys.readouterr().out)
    assert all(float(a["tfa"]) < float(b["tfa"]) for a, b in zip(low, nominal))


def test_summary_lists_per_class_statistics():
    an = analyze(load_spec(TOY), ["tfa"])
    text = summary(an)
    assert "class c1: flows=3" in text and "class c2: flows=2" in text
    assert to_csv(an).startswith("flow,class,path_length,tfa,converged\n")
